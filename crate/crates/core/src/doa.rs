//! Grid-search DOA estimation with the frequency-averaged Hermitian angle.

use std::borrow::Borrow;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{unit_vector, ArrayGeometry};
use crate::linalg::{norm2, C64};
use crate::rtf::RtfVector;

/// Angle between the complex lines spanned by `a` and `b`,
/// `arccos(|aᴴb| / (‖a‖·‖b‖))`, in `[0, π/2]`.
pub fn hermitian_angle(a: &[C64], b: &[C64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm2(a), norm2(b));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::config("Hermitian angle of a zero vector"));
    }
    let ua: Vec<C64> = a.iter().map(|v| v / na).collect();
    let ub: Vec<C64> = b.iter().map(|v| v / nb).collect();
    Ok(unit_angle(&ua, &ub))
}

/// Above this `|aᴴb|` the angle is taken from the chord instead of `acos`.
const CHORD_THRESHOLD: f64 = 0.9999;

/// `|aᴴb|` for unit-norm vectors.
#[inline]
fn inner_modulus(a: &[C64], b: &[C64]) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    (re * re + im * im).sqrt()
}

/// Hermitian angle of two unit-norm vectors. Near zero `acos` is badly
/// conditioned, so there the angle comes from the chord between `a` and
/// the phase-aligned `b`: `θ = 2·asin(‖a − e^{−iφ}·b‖ / 2)`.
fn unit_angle(a: &[C64], b: &[C64]) -> f64 {
    let c = inner_modulus(a, b);
    if c < CHORD_THRESHOLD {
        c.acos()
    } else {
        chord_angle(a, b)
    }
}

/// `acos` on `[0, 1]` as a branch-free rational approximation (asin
/// kernel of the Cephes library, max error about 1 ulp), so the cost
/// loop vectorises.
#[inline(always)]
fn acos_unit(x: f64) -> f64 {
    const P: [f64; 6] = [
        4.253011369004428248960e-3,
        -6.019598008014123785661e-1,
        5.444622390564711410273e0,
        -1.626247967210700244449e1,
        1.956261983317594739197e1,
        -8.198089802484824371615e0,
    ];
    const Q: [f64; 5] = [
        -1.474091372988853791896e1,
        7.049610280856842141659e1,
        -1.471791292232726029859e2,
        1.395105614657485689735e2,
        -4.918853881490881290097e1,
    ];
    let big = x > 0.5;
    let t = if big { ((1.0 - x) * 0.5).sqrt() } else { x };
    let z = t * t;
    let p = ((((P[0] * z + P[1]) * z + P[2]) * z + P[3]) * z + P[4]) * z + P[5];
    let q = ((((z + Q[0]) * z + Q[1]) * z + Q[2]) * z + Q[3]) * z + Q[4];
    let asin_t = t + t * z * p / q;
    if big {
        2.0 * asin_t
    } else {
        FRAC_PI_2 - asin_t
    }
}

fn chord_angle(a: &[C64], b: &[C64]) -> f64 {
    let ip = crate::linalg::inner(a, b);
    let c = ip.norm();
    if c == 0.0 {
        return FRAC_PI_2;
    }
    let phase = ip.conj() / c;
    let chord = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y * phase).norm_sqr())
        .sum::<f64>()
        .sqrt();
    2.0 * (0.5 * chord).min(1.0).asin()
}

/// The default azimuth grid: −180° to 175° in 5° steps.
pub fn default_directions() -> Vec<f64> {
    (0..72).map(|i| -180.0 + 5.0 * i as f64).collect()
}

/// Head-mounted prototype RTF vectors on an azimuth grid, `[I × K × M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeDatabase {
    pub directions: Vec<f64>,
    pub geometry_id: String,
    pub sample_rate: u32,
    pub fft_size: usize,
    bins: usize,
    mics: usize,
    vectors: Vec<C64>,
    /// Unit-norm copies of `vectors` for the cost evaluation.
    unit: Vec<C64>,
    /// The same values split into real and imaginary planes, `[K × M × 2 × I]`,
    /// so the inner products over all directions run on contiguous lanes.
    planes: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DbHeader {
    geometry_id: String,
    sample_rate: u32,
    fft_size: usize,
    directions: Vec<f64>,
    #[serde(rename = "M")]
    mics: usize,
    #[serde(rename = "K")]
    bins: usize,
    encoding: PayloadEncoding,
}

/// How the float32 payload after the JSON header line is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadEncoding {
    /// Raw little-endian float32, interleaved `(re, im)`.
    Raw,
    /// The same bytes as base64 text.
    Base64,
}

impl PrototypeDatabase {
    pub fn new(
        directions: Vec<f64>,
        geometry_id: String,
        sample_rate: u32,
        fft_size: usize,
        mics: usize,
        vectors: Vec<C64>,
    ) -> Result<Self> {
        let bins = fft_size / 2 + 1;
        if directions.is_empty() {
            return Err(Error::config("empty direction grid"));
        }
        if vectors.len() != directions.len() * bins * mics {
            return Err(Error::config(format!(
                "{} prototype entries for {} directions × {bins} bins × {mics} mics",
                vectors.len(),
                directions.len()
            )));
        }
        if !directions.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("directions must be strictly increasing"));
        }
        if directions.iter().any(|d| !(-180.0..180.0).contains(d)) {
            return Err(Error::config("directions must lie in [-180, 180)"));
        }
        for (idx, chunk) in vectors.chunks(mics).enumerate() {
            if chunk[0] != C64::new(1.0, 0.0) {
                return Err(Error::format(
                    "prototype database",
                    format!(
                        "reference entry of direction {} bin {} is {} instead of 1",
                        idx / bins,
                        idx % bins,
                        chunk[0]
                    ),
                ));
            }
        }
        // Bin-major copy `[K × I × M]` so one cost row walks memory linearly.
        let ndir = directions.len();
        let mut unit = Vec::with_capacity(vectors.len());
        for k in 0..bins {
            for i in 0..ndir {
                let start = (i * bins + k) * mics;
                let v = &vectors[start..start + mics];
                let n = norm2(v);
                unit.extend(v.iter().map(|x| x / n));
            }
        }
        let mut planes = Vec::with_capacity(2 * unit.len());
        for k in 0..bins {
            let block = &unit[k * ndir * mics..(k + 1) * ndir * mics];
            for m in 0..mics {
                planes.extend((0..ndir).map(|i| block[i * mics + m].re));
                planes.extend((0..ndir).map(|i| block[i * mics + m].im));
            }
        }
        Ok(Self {
            directions,
            geometry_id,
            sample_rate,
            fft_size,
            bins,
            mics,
            vectors,
            unit,
            planes,
        })
    }

    pub fn num_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn num_mics(&self) -> usize {
        self.mics
    }

    /// Prototype vector for direction index `i` at bin `k`.
    pub fn vector(&self, i: usize, k: usize) -> &[C64] {
        let start = (i * self.bins + k) * self.mics;
        &self.vectors[start..start + self.mics]
    }

    /// Unit-norm prototypes of every direction at bin `k`, `[I × M]`.
    fn unit_bin(&self, k: usize) -> &[C64] {
        let len = self.directions.len() * self.mics;
        &self.unit[k * len..(k + 1) * len]
    }

    fn planes_bin(&self, k: usize) -> &[f64] {
        let len = 2 * self.directions.len() * self.mics;
        &self.planes[k * len..(k + 1) * len]
    }

    pub fn index_of(&self, azimuth_deg: f64) -> Option<usize> {
        self.directions.iter().position(|d| (d - azimuth_deg).abs() < 1e-9)
    }

    pub fn write(&self, path: impl AsRef<Path>, encoding: PayloadEncoding) -> Result<()> {
        let path = path.as_ref();
        let header = DbHeader {
            geometry_id: self.geometry_id.clone(),
            sample_rate: self.sample_rate,
            fft_size: self.fft_size,
            directions: self.directions.clone(),
            mics: self.mics,
            bins: self.bins,
            encoding,
        };
        let mut payload = Vec::with_capacity(self.vectors.len() * 8);
        for v in &self.vectors {
            payload.extend_from_slice(&(v.re as f32).to_le_bytes());
            payload.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        match encoding {
            PayloadEncoding::Raw => out.extend_from_slice(&payload),
            PayloadEncoding::Base64 => {
                out.extend_from_slice(base64::engine::general_purpose::STANDARD.encode(&payload).as_bytes())
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::format("prototype database", "no header line"))?;
        let header: DbHeader = serde_json::from_slice(&bytes[..split])
            .map_err(|e| Error::format("prototype database", format!("bad header: {e}")))?;
        let body = &bytes[split + 1..];
        let payload = match header.encoding {
            PayloadEncoding::Raw => body.to_vec(),
            PayloadEncoding::Base64 => base64::engine::general_purpose::STANDARD
                .decode(body.trim_ascii())
                .map_err(|e| Error::format("prototype database", format!("bad base64: {e}")))?,
        };
        if header.bins != header.fft_size / 2 + 1 {
            return Err(Error::format(
                "prototype database",
                format!("K = {} inconsistent with fft_size {}", header.bins, header.fft_size),
            ));
        }
        let expected = header.directions.len() * header.bins * header.mics * 8;
        if payload.len() != expected {
            return Err(Error::format(
                "prototype database",
                format!("payload has {} bytes, expected {expected}", payload.len()),
            ));
        }
        let vectors = payload
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[..4].try_into().unwrap());
                let im = f32::from_le_bytes(c[4..].try_into().unwrap());
                C64::new(re as f64, im as f64)
            })
            .collect();
        Self::new(
            header.directions,
            header.geometry_id,
            header.sample_rate,
            header.fft_size,
            header.mics,
            vectors,
        )
    }
}

/// Free-field prototypes for the head-mounted microphones of `geometry`:
/// entry `m` is `exp(−jω_k·τ_m(θ)) / exp(−jω_k·τ₁(θ))` (times the shadow
/// magnitude ratio when enabled).
pub fn generate_prototypes(
    geometry: &ArrayGeometry,
    directions: &[f64],
    sample_rate: u32,
    fft_size: usize,
) -> Result<PrototypeDatabase> {
    geometry.validate()?;
    if fft_size < 2 || fft_size % 2 != 0 {
        return Err(Error::config(format!("fft size {fft_size} must be even")));
    }
    let bins = fft_size / 2 + 1;
    let mics = geometry.num_head();
    let mut vectors = Vec::with_capacity(directions.len() * bins * mics);
    for &az in directions {
        let dir = unit_vector(az, 0.0);
        for k in 0..bins {
            let omega = 2.0 * PI * k as f64 * sample_rate as f64 / fft_size as f64;
            let a = geometry.steering(&geometry.head_mics, &dir, omega);
            let reference = a[0];
            vectors.extend(a.iter().map(|x| x / reference));
            let start = vectors.len() - mics;
            vectors[start] = C64::new(1.0, 0.0);
        }
    }
    PrototypeDatabase::new(
        directions.to_vec(),
        geometry.identifier(),
        sample_rate,
        fft_size,
        mics,
        vectors,
    )
}

/// Frequency-averaged Hermitian angle for one frame against every grid
/// direction. Bin 0 (DC) and invalid bins are left out of the mean.
/// Returns `None` when no bin is valid.
pub fn cost_row<R: Borrow<RtfVector>>(estimates: &[R], db: &PrototypeDatabase) -> Result<Option<Vec<f64>>> {
    if estimates.len() != db.num_bins() {
        return Err(Error::config(format!(
            "{} bin estimates for a {}-bin database",
            estimates.len(),
            db.num_bins()
        )));
    }
    let mut row = vec![0.0; db.num_directions()];
    let mut used = 0usize;
    let mut unit = vec![C64::new(0.0, 0.0); db.num_mics()];
    let ndir = db.num_directions();
    let mut moduli = vec![0.0; ndir];
    let mut im_acc = vec![0.0; ndir];
    for (k, est) in estimates.iter().enumerate().skip(1) {
        let est = est.borrow();
        if !est.valid {
            continue;
        }
        if est.values.len() != db.num_mics() {
            return Err(Error::config(format!(
                "estimate of length {} for {} prototype microphones",
                est.values.len(),
                db.num_mics()
            )));
        }
        let n = norm2(&est.values);
        if !(n > 0.0) {
            continue;
        }
        for (u, v) in unit.iter_mut().zip(&est.values) {
            *u = v / n;
        }
        let protos = db.unit_bin(k);
        // Same arithmetic as `inner_modulus`, one microphone at a time.
        moduli.fill(0.0);
        im_acc.fill(0.0);
        for (u, planes) in unit.iter().zip(db.planes_bin(k).chunks_exact(2 * ndir)) {
            let (pr, pi) = planes.split_at(ndir);
            let (re, im) = (&mut moduli[..ndir], &mut im_acc[..ndir]);
            for i in 0..ndir {
                re[i] += pr[i] * u.re + pi[i] * u.im;
                im[i] += pr[i] * u.im - pi[i] * u.re;
            }
        }
        for i in 0..ndir {
            moduli[i] = (moduli[i] * moduli[i] + im_acc[i] * im_acc[i]).sqrt();
        }
        // `moduli` is turned into angles in place: vectorised `acos` first,
        // then the few near-collinear entries are recomputed from the chord.
        let near = moduli.iter().any(|&c| c >= CHORD_THRESHOLD);
        let m = unit.len();
        if near {
            for (i, a) in moduli.iter_mut().enumerate() {
                *a = if *a >= CHORD_THRESHOLD {
                    chord_angle(&protos[i * m..(i + 1) * m], &unit)
                } else {
                    a.acos()
                };
            }
        } else {
            moduli.iter_mut().for_each(|a| *a = acos_unit(*a));
        }
        for (cost, a) in row.iter_mut().zip(&moduli) {
            *cost += a;
        }
        used += 1;
    }
    if used == 0 {
        return Ok(None);
    }
    row.iter_mut().for_each(|c| *c /= used as f64);
    debug_assert!(row.iter().all(|c| (0.0..=FRAC_PI_2 + 1e-12).contains(c)));
    Ok(Some(row))
}

/// Per-frame DOA decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub azimuth_deg: f64,
    pub cost: f64,
    pub valid: bool,
}

impl DoaEstimate {
    pub fn invalid() -> Self {
        Self {
            azimuth_deg: f64::NAN,
            cost: f64::NAN,
            valid: false,
        }
    }
}

/// Grid direction of minimal cost. Exact ties go to the smallest absolute
/// azimuth, then to the smaller azimuth.
pub fn argmin_direction(cost: Option<&[f64]>, directions: &[f64]) -> DoaEstimate {
    let Some(cost) = cost else {
        return DoaEstimate::invalid();
    };
    if cost.len() != directions.len() || cost.is_empty() || cost.iter().any(|c| c.is_nan()) {
        return DoaEstimate::invalid();
    }
    let mut best = 0;
    for i in 1..cost.len() {
        let (ci, cb) = (cost[i], cost[best]);
        let better = ci < cb
            || (ci == cb
                && (directions[i].abs() < directions[best].abs()
                    || (directions[i].abs() == directions[best].abs() && directions[i] < directions[best])));
        if better {
            best = i;
        }
    }
    DoaEstimate {
        azimuth_deg: directions[best],
        cost: cost[best],
        valid: true,
    }
}

/// `J(l, θᵢ)` for every frame; invalid frames hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSurface {
    pub directions: Vec<f64>,
    pub rows: Vec<Option<Vec<f64>>>,
}

impl CostSurface {
    /// CSV with one row per frame: `frame,<azimuth columns...>`; invalid
    /// frames have empty cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("frame");
        for d in &self.directions {
            out.push_str(&format!(",{d}"));
        }
        out.push('\n');
        for (l, row) in self.rows.iter().enumerate() {
            out.push_str(&l.to_string());
            match row {
                Some(r) => r.iter().for_each(|v| out.push_str(&format!(",{v:.6}"))),
                None => self.directions.iter().for_each(|_| out.push(',')),
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtf::RtfVariant;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn angle_examples() {
        assert_abs_diff_eq!(hermitian_angle(&[c(1., 0.), c(0., 1.)], &[c(1., 0.), c(0., 1.)]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            hermitian_angle(&[c(1., 0.), c(0., 0.)], &[c(0., 0.), c(1., 0.)]).unwrap(),
            FRAC_PI_2
        );
        assert_abs_diff_eq!(
            hermitian_angle(&[c(1., 0.), c(1., 0.)], &[c(1., 0.), c(0., 1.)]).unwrap(),
            PI / 4.0,
            epsilon = 1e-15
        );
        assert!(hermitian_angle(&[c(0., 0.); 2], &[c(1., 0.); 2]).is_err());
    }

    #[test]
    fn fast_acos_matches_std() {
        let mut worst = 0.0f64;
        for i in 0..=200_000 {
            let x = i as f64 / 200_000.0;
            worst = worst.max((acos_unit(x) - x.acos()).abs());
        }
        assert!(worst < 1e-15, "max error {worst:e}");
        assert_eq!(acos_unit(1.0), 0.0);
        assert_abs_diff_eq!(acos_unit(0.0), FRAC_PI_2, epsilon = 1e-16);
    }

    fn two_mic() -> ArrayGeometry {
        ArrayGeometry {
            head_mics: vec![[0.0, 0.05, 0.0], [0.0, -0.05, 0.0]],
            external_mic: None,
            head_shadow: false,
        }
    }

    #[test]
    fn broadside_prototype_is_all_ones() {
        let db = generate_prototypes(&two_mic(), &[0.0], 16_000, 512).unwrap();
        for k in 0..db.num_bins() {
            let v = db.vector(0, k);
            assert_abs_diff_eq!(v[1].re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v[1].im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn endfire_prototype_is_spacing_delay() {
        let d = 0.1;
        let db = generate_prototypes(&two_mic(), &[90.0], 16_000, 512).unwrap();
        for k in [1usize, 17, 100, 256] {
            let omega = 2.0 * PI * k as f64 * 16_000.0 / 512.0;
            let expected = C64::from_polar(1.0, -omega * d / crate::geometry::SPEED_OF_SOUND);
            let v = db.vector(0, k)[1];
            assert_abs_diff_eq!(v.re, expected.re, epsilon = 1e-12);
            assert_abs_diff_eq!(v.im, expected.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn self_match_is_zero() {
        let db = generate_prototypes(&ArrayGeometry::binaural(), &default_directions(), 16_000, 512).unwrap();
        for i in 0..db.num_directions() {
            for k in 0..db.num_bins() {
                let v = db.vector(i, k);
                assert_eq!(hermitian_angle(v, v).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn argmin_examples() {
        let dirs = [-5.0, 0.0, 5.0];
        assert_eq!(argmin_direction(Some(&[0.3, 0.1, 0.5]), &dirs).azimuth_deg, 0.0);
        assert_eq!(argmin_direction(Some(&[0.1, 0.3, 0.1]), &dirs).azimuth_deg, -5.0);
        assert_eq!(argmin_direction(Some(&[0.2, 0.2, 0.2]), &dirs).azimuth_deg, 0.0);
        assert_eq!(argmin_direction(Some(&[0.1, 0.2, 0.3]), &dirs).azimuth_deg, -5.0);
        assert!(!argmin_direction(None, &dirs).valid);
    }

    fn estimates_from(db: &PrototypeDatabase, i: usize) -> Vec<RtfVector> {
        (0..db.num_bins())
            .map(|k| RtfVector {
                values: db.vector(i, k).to_vec(),
                variant: RtfVariant::Head,
                valid: true,
            })
            .collect()
    }

    #[test]
    fn cost_row_perfect_match() {
        let db = generate_prototypes(&ArrayGeometry::binaural(), &default_directions(), 16_000, 512).unwrap();
        let row = cost_row(&estimates_from(&db, 10), &db).unwrap().unwrap();
        assert!(row[10] < 1e-12);
        for (i, v) in row.iter().enumerate() {
            if i != 10 {
                assert!(*v > row[10]);
            }
        }
    }

    #[test]
    fn cost_row_without_valid_bins() {
        let db = generate_prototypes(&two_mic(), &[0.0, 90.0], 16_000, 16).unwrap();
        let mut est = estimates_from(&db, 0);
        est.iter_mut().for_each(|e| e.valid = false);
        assert_eq!(cost_row(&est, &db).unwrap(), None);
    }

    #[test]
    fn cost_row_single_bin_is_that_angle() {
        let db = generate_prototypes(&two_mic(), &[0.0, 90.0], 16_000, 16).unwrap();
        let mut est = estimates_from(&db, 0);
        est.iter_mut().for_each(|e| e.valid = false);
        est[3] = RtfVector {
            values: vec![c(1.0, 0.0), c(0.3, -0.8)],
            variant: RtfVariant::Head,
            valid: true,
        };
        let row = cost_row(&est, &db).unwrap().unwrap();
        for i in 0..2 {
            let expected = hermitian_angle(db.vector(i, 3), &est[3].values).unwrap();
            assert_abs_diff_eq!(row[i], expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn dc_bin_is_ignored() {
        let db = generate_prototypes(&two_mic(), &[0.0, 90.0], 16_000, 16).unwrap();
        let mut est = estimates_from(&db, 0);
        est.iter_mut().skip(1).for_each(|e| e.valid = false);
        assert_eq!(cost_row(&est, &db).unwrap(), None);
    }

    #[test]
    fn database_file_round_trips() {
        let db = generate_prototypes(&ArrayGeometry::binaural(), &default_directions(), 16_000, 64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for enc in [PayloadEncoding::Raw, PayloadEncoding::Base64] {
            let p = dir.path().join("db.bin");
            db.write(&p, enc).unwrap();
            let back = PrototypeDatabase::read(&p).unwrap();
            assert_eq!(back.directions, db.directions);
            assert_eq!(back.num_bins(), db.num_bins());
            for i in 0..db.num_directions() {
                for k in 0..db.num_bins() {
                    for (a, b) in back.vector(i, k).iter().zip(db.vector(i, k)) {
                        assert!((a - b).norm() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn loader_checks_reference_entry() {
        let dirs = vec![0.0];
        let bad = vec![c(0.5, 0.0), c(1.0, 0.0)];
        assert!(PrototypeDatabase::new(dirs, "x".into(), 16_000, 0, 2, bad).is_err());
        let header = br#"{"geometry_id":"x","sample_rate":16000,"fft_size":2,"directions":[0.0],"M":2,"K":2,"encoding":"raw"}"#;
        let mut bytes = header.to_vec();
        bytes.push(b'\n');
        for v in [1.0f32, 0.0, 1.0, 0.0, 0.9, 0.0, 1.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            PrototypeDatabase::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn unsorted_directions_rejected() {
        let v = vec![c(1.0, 0.0); 2 * 2];
        assert!(PrototypeDatabase::new(vec![5.0, 0.0], "x".into(), 16_000, 2, 1, v).is_err());
    }
}
