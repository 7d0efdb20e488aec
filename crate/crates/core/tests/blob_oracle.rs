use cbir_core::frangi::{frangi_filter, FrangiParams};
use cbir_core::imagecore::ImageGrid;

const N: usize = 64;

fn gaussian_blob(sign: f64) -> ImageGrid {
    let c = (N as f64 - 1.0) / 2.0;
    ImageGrid::from_fn(N, N, |x, y| {
        let r2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
        0.5 + sign * 0.5 * (-r2 / 18.0).exp()
    })
}

fn mirror(i: i64, n: i64) -> usize {
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

/// Dense evaluation: direct 2-D convolution, second differences, closed-form
/// eigenvalues and the response formula at every pixel and scale.
fn oracle(img: &ImageGrid, p: &FrangiParams) -> (Vec<f64>, Vec<f64>) {
    let n = N as i64;
    let mut best = vec![0.0f64; N * N];
    let mut arg = vec![p.scales[0]; N * N];
    for &s in &p.scales {
        let r = (3.0 * s).ceil() as i64;
        let mut norm = 0.0;
        for i in -r..=r {
            for j in -r..=r {
                norm += (-((i * i) as f64) / (2.0 * s * s)).exp() * (-((j * j) as f64) / (2.0 * s * s)).exp();
            }
        }
        let mut blurred = vec![0.0; N * N];
        for y in 0..n {
            for x in 0..n {
                let mut acc = 0.0;
                for j in -r..=r {
                    for i in -r..=r {
                        let w = (-((i * i + j * j) as f64) / (2.0 * s * s)).exp();
                        acc += w * img.get(mirror(x + i, n), mirror(y + j, n));
                    }
                }
                blurred[(y * n + x) as usize] = acc / norm;
            }
        }
        let b = |x: i64, y: i64| blurred[mirror(y, n) * N + mirror(x, n)];
        for y in 0..n {
            for x in 0..n {
                let hxx = (b(x + 1, y) - 2.0 * b(x, y) + b(x - 1, y)) * s * s;
                let hyy = (b(x, y + 1) - 2.0 * b(x, y) + b(x, y - 1)) * s * s;
                let hxy = (b(x + 1, y + 1) - b(x + 1, y - 1) - b(x - 1, y + 1) + b(x - 1, y - 1)) / 4.0 * s * s;
                let mean = (hxx + hyy) / 2.0;
                let rad = (((hxx - hyy) / 2.0).powi(2) + hxy * hxy).sqrt();
                let (mut l1, mut l2) = (mean - rad, mean + rad);
                if l1.abs() > l2.abs() {
                    std::mem::swap(&mut l1, &mut l2);
                }
                let v = if l2 >= 0.0 {
                    0.0
                } else {
                    let rb = l1.abs() / l2.abs();
                    (-(rb * rb) / (2.0 * p.beta * p.beta)).exp()
                        * (1.0 - (-(l1 * l1 + l2 * l2) / (2.0 * p.gamma * p.gamma)).exp())
                };
                let k = (y * n + x) as usize;
                if v > best[k] {
                    best[k] = v;
                    arg[k] = s;
                }
            }
        }
    }
    (best, arg)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn params() -> FrangiParams {
    FrangiParams::default().with_scales(vec![1.0, 2.0, 3.0, 4.0, 5.0])
}

#[test]
fn bright_blob_matches_dense_oracle() {
    let img = gaussian_blob(1.0);
    let p = params();
    let got = frangi_filter(&img, &p).unwrap();
    let (want, want_arg) = oracle(&img, &p);
    for i in 0..N * N {
        assert!((got.values[i] - want[i]).abs() < 1e-9, "pixel {i}: {} vs {}", got.values[i], want[i]);
    }
    let (at, peak) = got.max();
    let w = argmax(&want);
    assert!((peak - want[w]).abs() < 1e-9);
    assert!((got.values[w] - peak).abs() < 1e-9, "peak at {at}, oracle at {w}");
    assert!((2.0..=5.0).contains(&got.argmax_scale[at]));
    assert_eq!(got.argmax_scale[w], want_arg[w]);

    let (x, y) = ((at % N) as f64, (at / N) as f64);
    let c = (N as f64 - 1.0) / 2.0;
    assert!(((x - c).powi(2) + (y - c).powi(2)).sqrt() < 6.0);
}

#[test]
fn dark_blob_centre_is_suppressed() {
    let img = gaussian_blob(-1.0);
    let p = params();
    let got = frangi_filter(&img, &p).unwrap();
    let (want, _) = oracle(&img, &p);
    for i in 0..N * N {
        assert!((got.values[i] - want[i]).abs() < 1e-9);
    }
    for (x, y) in [(31, 31), (32, 31), (31, 32), (32, 32)] {
        assert_eq!(got.values[y * N + x], 0.0);
    }
}
