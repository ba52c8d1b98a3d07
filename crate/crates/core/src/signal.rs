//! Time-frequency analysis and synthesis, RI/MP feature construction, and
//! inter-channel time-difference maps.
//!
//! Framing rule: the signal is center-padded with `fft_size/2` zeros at each
//! end, frame `t` covers padded samples `[t*hop, t*hop + fft_size)`, and the
//! frame count is `floor(len/hop) + 1`. The synthesis window is the analysis
//! window normalized by the summed squared-window envelope, so the round trip
//! is exact wherever the envelope is positive.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("input too short: {len} samples, need at least {fft_size}")]
    InputTooShort { len: usize, fft_size: usize },
    #[error("spectrogram geometry {spec:?} does not match config {cfg:?}")]
    GeometryMismatch { spec: (usize, usize), cfg: (usize, usize) },
    #[error("itd_map requires two distinct microphone indices, got {0} twice")]
    IdenticalMics(usize),
    #[error("microphone index {idx} out of range for {channels} channels")]
    BadChannel { idx: usize, channels: usize },
    #[error("need at least 2 frequency bins, got {0}")]
    TooFewBins(usize),
    #[error("window/hop combination violates COLA: envelope vanishes")]
    ColaViolation,
    #[error("invalid waveform: {0}")]
    BadWaveform(String),
}

/// Analysis window taper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WindowKind {
    /// Periodic Hann: `0.5 - 0.5 cos(2 pi n / N)`. Exact COLA at 50% hop.
    PeriodicHann,
    Rectangular,
}

impl WindowKind {
    pub fn taps(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::PeriodicHann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    /// FFT size == window length, samples.
    pub fft_size: usize,
    /// Hop between frames, samples.
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            fft_size: 512,
            hop: 256,
            window: WindowKind::PeriodicHann,
        }
    }
}

impl StftConfig {
    pub fn with_fft(fft_size: usize) -> Self {
        StftConfig {
            fft_size,
            hop: fft_size / 2,
            window: WindowKind::PeriodicHann,
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        len / self.hop + 1
    }
}

/// Multichannel time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    /// channels x length
    pub samples: Array2<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if samples.ncols() == 0 || samples.nrows() == 0 {
            return Err(SignalError::BadWaveform("empty sample grid".into()));
        }
        if sample_rate == 0 {
            return Err(SignalError::BadWaveform("sample_rate must be positive".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn from_mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        let n = samples.len();
        Waveform::new(Array2::from_shape_vec((1, n), samples).unwrap(), sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> ndarray::ArrayView1<'_, f64> {
        self.samples.row(c)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }
}

/// channels x frames x bins complex STFT grid.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub data: Array3<Complex64>,
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }
    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }
    pub fn bins(&self) -> usize {
        self.data.shape()[2]
    }
}

pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram, SignalError> {
    let n = cfg.fft_size;
    let len = wave.len();
    if len < n {
        return Err(SignalError::InputTooShort { len, fft_size: n });
    }
    let window = cfg.window.taps(n);
    let pad = n / 2;
    let frames = cfg.frames_for(len);
    let bins = cfg.bins();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);

    let channels = wave.channels();
    let mut out = Array3::from_elem((channels, frames, bins), Complex64::new(0.0, 0.0));
    let mut padded = vec![0.0f64; len + 2 * n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..channels {
        padded.iter_mut().for_each(|x| *x = 0.0);
        for (i, &x) in wave.channel(m).iter().enumerate() {
            padded[pad + i] = x;
        }
        for t in 0..frames {
            for i in 0..n {
                buf[i] = Complex64::new(padded[t * cfg.hop + i] * window[i], 0.0);
            }
            fft.process(&mut buf);
            for f in 0..bins {
                out[[m, t, f]] = buf[f];
            }
        }
    }
    Ok(ComplexSpectrogram {
        data: out,
        fft_size: n,
        hop: cfg.hop,
        sample_rate: wave.sample_rate,
    })
}

pub fn istft(
    spec: &ComplexSpectrogram,
    cfg: &StftConfig,
    out_length: usize,
) -> Result<Waveform, SignalError> {
    if spec.fft_size != cfg.fft_size || spec.hop != cfg.hop || spec.bins() != cfg.bins() {
        return Err(SignalError::GeometryMismatch {
            spec: (spec.fft_size, spec.hop),
            cfg: (cfg.fft_size, cfg.hop),
        });
    }
    let n = cfg.fft_size;
    let pad = n / 2;
    let frames = spec.frames();
    let window = cfg.window.taps(n);
    let padded_len = (frames - 1) * cfg.hop + n;

    let env = ola_envelope(&window, cfg.hop, frames);
    // Every output sample inside the original-signal region must be covered.
    let check_to = (pad + out_length).min(padded_len);
    if env[pad..check_to].iter().any(|&e| e < 1e-10) {
        return Err(SignalError::ColaViolation);
    }

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let channels = spec.channels();
    let mut out = Array2::zeros((channels, out_length));
    let mut acc = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut bins = vec![Complex64::new(0.0, 0.0); cfg.bins()];
    for m in 0..channels {
        acc.iter_mut().for_each(|x| *x = 0.0);
        for t in 0..frames {
            for (f, b) in bins.iter_mut().enumerate() {
                *b = spec.data[[m, t, f]];
            }
            hermitian_fill(&bins, n, &mut buf);
            ifft.process(&mut buf);
            for i in 0..n {
                // rustfft's inverse is unnormalized
                acc[t * cfg.hop + i] += buf[i].re / n as f64 * window[i];
            }
        }
        for i in 0..out_length {
            let p = pad + i;
            if p < padded_len && env[p] > 1e-10 {
                out[[m, i]] = acc[p] / env[p];
            }
        }
    }
    Waveform::new(out, spec.sample_rate)
}

/// Summed squared-window envelope over the padded domain.
pub fn ola_envelope(window: &[f64], hop: usize, frames: usize) -> Vec<f64> {
    let n = window.len();
    let mut env = vec![0.0f64; (frames - 1) * hop + n];
    for t in 0..frames {
        for i in 0..n {
            env[t * hop + i] += window[i] * window[i];
        }
    }
    env
}

fn hermitian_fill(bins: &[Complex64], n: usize, buf: &mut [Complex64]) {
    // One-sided spectrum to full length-n Hermitian spectrum. DC and Nyquist
    // imaginary parts are discarded: a real signal has none.
    buf[0] = Complex64::new(bins[0].re, 0.0);
    let half = n / 2;
    for f in 1..half {
        buf[f] = bins[f];
        buf[n - f] = bins[f].conj();
    }
    buf[half] = Complex64::new(bins[half].re, 0.0);
}

/// Stacked real/imaginary features: channel `2m` is Re of mic `m`, channel
/// `2m+1` is Im.
pub fn to_ri(spec: &ComplexSpectrogram) -> Tensor<f64> {
    let (m, t, f) = (spec.channels(), spec.frames(), spec.bins());
    let mut data = vec![0.0f64; 2 * m * t * f];
    for mi in 0..m {
        for ti in 0..t {
            for fi in 0..f {
                let v = spec.data[[mi, ti, fi]];
                data[((2 * mi) * t + ti) * f + fi] = v.re;
                data[((2 * mi + 1) * t + ti) * f + fi] = v.im;
            }
        }
    }
    Tensor::from_vec(&[2 * m, t, f], data)
}

/// Stacked magnitude/phase features: channel `2m` is |.|, channel `2m+1` is
/// atan2(Im, Re) in (-pi, pi]; the phase of an exact zero is 0.
pub fn to_mp(spec: &ComplexSpectrogram) -> Tensor<f64> {
    let (m, t, f) = (spec.channels(), spec.frames(), spec.bins());
    let mut data = vec![0.0f64; 2 * m * t * f];
    for mi in 0..m {
        for ti in 0..t {
            for fi in 0..f {
                let v = spec.data[[mi, ti, fi]];
                let mag = (v.re * v.re + v.im * v.im).sqrt();
                let phase = if v.re == 0.0 && v.im == 0.0 {
                    0.0
                } else {
                    v.im.atan2(v.re)
                };
                data[((2 * mi) * t + ti) * f + fi] = mag;
                data[((2 * mi + 1) * t + ti) * f + fi] = phase;
            }
        }
    }
    Tensor::from_vec(&[2 * m, t, f], data)
}

/// Inverse of [`to_ri`].
pub fn ri_to_spec(
    grid: &Tensor<f64>,
    fft_size: usize,
    hop: usize,
    sample_rate: u32,
) -> ComplexSpectrogram {
    let shape = grid.shape();
    assert_eq!(shape.len(), 3);
    assert_eq!(shape[0] % 2, 0, "RI grid needs an even channel count");
    let (m, t, f) = (shape[0] / 2, shape[1], shape[2]);
    let mut data = Array3::from_elem((m, t, f), Complex64::new(0.0, 0.0));
    for mi in 0..m {
        for ti in 0..t {
            for fi in 0..f {
                let re = grid.data()[((2 * mi) * t + ti) * f + fi];
                let im = grid.data()[((2 * mi + 1) * t + ti) * f + fi];
                data[[mi, ti, fi]] = Complex64::new(re, im);
            }
        }
    }
    ComplexSpectrogram {
        data,
        fft_size,
        hop,
        sample_rate,
    }
}

/// Inverse of [`to_mp`] (up to the zero-phase convention).
pub fn mp_to_spec(
    grid: &Tensor<f64>,
    fft_size: usize,
    hop: usize,
    sample_rate: u32,
) -> ComplexSpectrogram {
    let shape = grid.shape();
    assert_eq!(shape.len(), 3);
    let (m, t, f) = (shape[0] / 2, shape[1], shape[2]);
    let mut data = Array3::from_elem((m, t, f), Complex64::new(0.0, 0.0));
    for mi in 0..m {
        for ti in 0..t {
            for fi in 0..f {
                let mag = grid.data()[((2 * mi) * t + ti) * f + fi];
                let ph = grid.data()[((2 * mi + 1) * t + ti) * f + fi];
                data[[mi, ti, fi]] = Complex64::new(mag * ph.cos(), mag * ph.sin());
            }
        }
    }
    ComplexSpectrogram {
        data,
        fft_size,
        hop,
        sample_rate,
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    x - two_pi * ((x - std::f64::consts::PI) / two_pi).ceil()
}

/// Per-bin inter-channel delay in seconds between `ref_pair.0` and
/// `ref_pair.1`. Bin 0 is defined as 0; no phase unwrapping is attempted.
pub fn itd_map(
    spec: &ComplexSpectrogram,
    ref_pair: (usize, usize),
) -> Result<Array2<f64>, SignalError> {
    let (a, b) = ref_pair;
    if a == b {
        return Err(SignalError::IdenticalMics(a));
    }
    for idx in [a, b] {
        if idx >= spec.channels() {
            return Err(SignalError::BadChannel {
                idx,
                channels: spec.channels(),
            });
        }
    }
    if spec.bins() < 2 {
        return Err(SignalError::TooFewBins(spec.bins()));
    }
    let (t, f) = (spec.frames(), spec.bins());
    let mut out = Array2::zeros((t, f));
    for ti in 0..t {
        for fi in 1..f {
            let va = spec.data[[a, ti, fi]];
            let vb = spec.data[[b, ti, fi]];
            let pa = if va.re == 0.0 && va.im == 0.0 { 0.0 } else { va.im.atan2(va.re) };
            let pb = if vb.re == 0.0 && vb.im == 0.0 { 0.0 } else { vb.im.atan2(vb.re) };
            let dphi = wrap_phase(pa - pb);
            let f_hz = fi as f64 * spec.sample_rate as f64 / spec.fft_size as f64;
            out[[ti, fi]] = dphi / (2.0 * std::f64::consts::PI * f_hz);
        }
    }
    Ok(out)
}

/// Frequency-domain energy of a spectrogram under the windowed Parseval
/// identity: equals `sum_m sum_k x_padded[k]^2 * envelope[k]`.
pub fn spectrogram_energy(spec: &ComplexSpectrogram) -> f64 {
    let n = spec.fft_size as f64;
    let half = spec.fft_size / 2;
    let mut total = 0.0;
    for m in 0..spec.channels() {
        for t in 0..spec.frames() {
            for f in 0..spec.bins() {
                let c = if f == 0 || f == half { 1.0 } else { 2.0 };
                total += c * spec.data[[m, t, f]].norm_sqr();
            }
        }
    }
    total / n
}
