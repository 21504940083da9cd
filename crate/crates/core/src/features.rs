//! Numeric input frontend: mel filterbank, log compression, spectrogram
//! pooling, and the per-excerpt feature matrix consumed by classifiers.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::matrix_file;
use crate::sampling::MonolabelEntry;

/// Number of mel bands produced by the reference frontend.
pub const N_MELS: usize = 96;

/// Feature vectors, one row per excerpt, aligned with an annotation set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((r, c), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite feature {v} at ({r}, {c})")));
        }
        Ok(Self { values })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), indices),
        }
    }

    /// Training matrix for a monolabel assignment: row `i` is the features of
    /// `entries[i].track_index`, perturbed by `jitter` for excerpts past 0.
    pub fn gather(&self, entries: &[MonolabelEntry], jitter: Option<&dyn ExcerptVariation>) -> Self {
        let idx: Vec<usize> = entries.iter().map(|e| e.track_index).collect();
        let mut values = self.values.select(Axis(0), &idx);
        if let Some(j) = jitter {
            for (mut row, e) in values.axis_iter_mut(Axis(0)).zip(entries) {
                if e.track.excerpt_index > 0 {
                    j.perturb(
                        &e.track.track_id,
                        e.track.excerpt_index,
                        row.as_slice_mut().expect("standard layout"),
                    );
                }
            }
        }
        Self { values }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        matrix_file::write(path, &self.values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(matrix_file::read(path)?)
    }
}

/// How a different excerpt of the same track changes its feature vector.
pub trait ExcerptVariation: Sync {
    fn perturb(&self, track_id: &str, excerpt_index: u32, row: &mut [f64]);
}

/// `m(f) = 2595 log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `n_fft / 2 + 1` bins of a real FFT.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub n_fft: usize,
    pub sample_rate: f64,
    pub n_mels: usize,
    /// Band edges and centers in Hz, `n_mels + 2` of them.
    pub points_hz: Vec<f64>,
    /// `n_mels x (n_fft / 2 + 1)`.
    pub weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Mel energies of one power spectrum frame.
    pub fn apply(&self, spectrum: &[f64]) -> Result<Array1<f64>> {
        if spectrum.len() != self.n_bins() {
            return Err(Error::Shape(format!(
                "spectrum has {} bins, filterbank expects {}",
                spectrum.len(),
                self.n_bins()
            )));
        }
        Ok(self.weights.dot(&Array1::from(spectrum.to_vec())))
    }
}

/// Builds `n_mels` triangles whose edges and centers are equally spaced on
/// the mel scale between `f_min` and `f_max`. Fails if a triangle falls
/// between two FFT bins.
pub fn mel_filterbank(
    n_fft: usize,
    sample_rate: f64,
    n_mels: usize,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    if n_mels == 0 {
        return Err(Error::Parameter("n_mels must be at least 1".into()));
    }
    if n_fft < 2 {
        return Err(Error::Parameter("n_fft must be at least 2".into()));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0) {
        return Err(Error::Parameter(format!(
            "need 0 <= f_min < f_max <= sample_rate/2, got f_min={f_min} f_max={f_max} sr={sample_rate}"
        )));
    }
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let points_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate / n_fft as f64;
    let mut weights = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (points_hz[m], points_hz[m + 1], points_hz[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            weights[[m, k]] = w;
        }
        if weights.row(m).sum() == 0.0 {
            return Err(Error::Parameter(format!(
                "mel filter {m} covers no FFT bin; use fewer bands or a longer FFT"
            )));
        }
    }
    Ok(MelFilterbank {
        n_fft,
        sample_rate,
        n_mels,
        points_hz,
        weights,
    })
}

/// `ln(1 + C x)`.
pub fn log_compress(x: f64, c: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("log compression of negative value {x}")));
    }
    Ok((c * x).ln_1p())
}

/// Elementwise [`log_compress`].
pub fn log_compress_matrix(x: &Array2<f64>, c: f64) -> Result<Array2<f64>> {
    if let Some(v) = x.iter().find(|v| **v < 0.0 || v.is_nan()) {
        return Err(Error::Domain(format!("log compression of negative value {v}")));
    }
    Ok(x.mapv(|v| (c * v).ln_1p()))
}

/// Per-band mean followed by per-band population standard deviation.
pub fn pool_spectrogram(spec: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let (frames, bands) = spec.dim();
    if bands != N_MELS {
        return Err(Error::Shape(format!("spectrogram has {bands} bands, expected {N_MELS}")));
    }
    if frames == 0 {
        return Err(Error::Shape("spectrogram has no frames".into()));
    }
    if spec.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite spectrogram value".into()));
    }
    let mean = spec.mean_axis(Axis(0)).expect("frames > 0");
    let std = spec.std_axis(Axis(0), 0.0);
    let mut out = Array1::zeros(2 * N_MELS);
    out.slice_mut(ndarray::s![..N_MELS]).assign(&mean);
    out.slice_mut(ndarray::s![N_MELS..]).assign(&std);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mel_of_700_hz() {
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn reference_filterbank_shape_and_support() {
        let fb = mel_filterbank(1024, 22050.0, 96, 0.0, 11025.0).unwrap();
        assert_eq!(fb.weights.dim(), (96, 513));
        for row in fb.weights.rows() {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().cloned().fold(0.0, f64::max) > 0.0);
            // unimodal: non-decreasing then non-increasing
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(row.iter().take(peak + 1).collect::<Vec<_>>().windows(2).all(|w| w[0] <= w[1]));
            assert!(row.iter().skip(peak).collect::<Vec<_>>().windows(2).all(|w| w[0] >= w[1]));
        }
        let bin_hz = 22050.0 / 1024.0;
        for k in 0..513 {
            let f = k as f64 * bin_hz;
            if f >= fb.points_hz[1] && f <= fb.points_hz[96] {
                assert!(fb.weights.column(k).sum() > 0.0, "bin {k} uncovered");
            }
        }
        let flat = fb.apply(&[1.0; 513]).unwrap();
        assert!(flat.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn single_filter_peaks_at_mid_mel() {
        let fb = mel_filterbank(1024, 22050.0, 1, 0.0, 11025.0).unwrap();
        assert_eq!(fb.points_hz.len(), 3);
        assert_eq!(fb.points_hz[0], 0.0);
        assert!((fb.points_hz[2] - 11025.0).abs() < 1e-6);
        let mid = mel_to_hz(hz_to_mel(11025.0) / 2.0);
        assert!((fb.points_hz[1] - mid).abs() < 1e-9);
    }

    #[test]
    fn invalid_bounds() {
        assert!(mel_filterbank(1024, 22050.0, 96, 100.0, 50.0).is_err());
        assert!(mel_filterbank(1024, 22050.0, 96, 0.0, 12000.0).is_err());
        assert!(mel_filterbank(1024, 22050.0, 0, 0.0, 8000.0).is_err());
        assert!(matches!(mel_filterbank(64, 22050.0, 96, 0.0, 11025.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn log_compression_values() {
        assert_eq!(log_compress(0.0, 10000.0).unwrap(), 0.0);
        assert!((log_compress(1.0, 10000.0).unwrap() - 10001f64.ln()).abs() < 1e-12);
        assert!((log_compress(1.0, 10000.0).unwrap() - 9.21044).abs() < 1e-5);
        assert!(log_compress(-1e-9, 10000.0).is_err());
        assert!(log_compress_matrix(&ndarray::arr2(&[[0.0, -1.0]]), 10000.0).is_err());
    }

    #[test]
    fn pooling_cases() {
        let c = Array2::from_elem((5, N_MELS), 3.5);
        let p = pool_spectrogram(c.view()).unwrap();
        assert!(p.slice(ndarray::s![..N_MELS]).iter().all(|&v| v == 3.5));
        assert!(p.slice(ndarray::s![N_MELS..]).iter().all(|&v| v == 0.0));

        let mut two = Array2::zeros((2, N_MELS));
        two.row_mut(1).fill(2.0);
        let p = pool_spectrogram(two.view()).unwrap();
        assert!(p.slice(ndarray::s![..N_MELS]).iter().all(|&v| v == 1.0));
        assert!(p.slice(ndarray::s![N_MELS..]).iter().all(|&v| v == 1.0));

        let one = Array2::from_shape_fn((1, N_MELS), |(_, j)| j as f64);
        let p = pool_spectrogram(one.view()).unwrap();
        assert_eq!(p.slice(ndarray::s![..N_MELS]), one.row(0));

        assert!(matches!(
            pool_spectrogram(Array2::<f64>::zeros((3, 95)).view()),
            Err(Error::Shape(_))
        ));
    }

    proptest! {
        #[test]
        fn log_compress_monotone(a in 0.0f64..1e3, b in 0.0f64..1e3) {
            prop_assume!(a < b);
            prop_assert!(log_compress(a, 10000.0).unwrap() < log_compress(b, 10000.0).unwrap());
        }

        #[test]
        fn log_compress_commutes_with_permutation(v in proptest::collection::vec(0.0f64..10.0, 1..20), rot in 0usize..20) {
            let n = v.len();
            let m = Array2::from_shape_vec((1, n), v.clone()).unwrap();
            let mut permuted = v.clone();
            permuted.rotate_left(rot % n);
            let pm = Array2::from_shape_vec((1, n), permuted).unwrap();
            let mut a: Vec<f64> = log_compress_matrix(&m, 10000.0).unwrap().into_iter().collect();
            a.rotate_left(rot % n);
            let b: Vec<f64> = log_compress_matrix(&pm, 10000.0).unwrap().into_iter().collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn pooling_ignores_frame_order(frames in 1usize..8, seed in any::<u64>(), rot in 0usize..8) {
            let spec = Array2::from_shape_fn((frames, N_MELS), |(i, j)| {
                ((seed % 1000) as f64 + (i * 97 + j) as f64).sin()
            });
            let mut order: Vec<usize> = (0..frames).collect();
            order.rotate_left(rot % frames);
            let shuffled = spec.select(Axis(0), &order);
            let a = pool_spectrogram(spec.view()).unwrap();
            let b = pool_spectrogram(shuffled.view()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
