//! The named parameter pack of the hierarchical model, its flat text format
//! and the mapping to an unconstrained optimizer vector.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model reductions sharing one parameter pack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Space-time covariance with a latent common signal and three neighbors.
    #[default]
    Full,
    /// Per-location temporal covariance only; the transition uses the nearest
    /// neighbor alone.
    TemporalOnly,
    /// Independent errors; the transition maps the nearest neighbor at the
    /// same hour only.
    BiasOnly,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::TemporalOnly => "temporal-only",
            Variant::BiasOnly => "bias-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "temporal-only" | "temporal" => Ok(Variant::TemporalOnly),
            "bias-only" | "bias" => Ok(Variant::BiasOnly),
            other => Err(Error::parse("variant", format!("unknown variant `{other}`"))),
        }
    }
}

/// Squared-exponential-plus-nugget temporal kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub sigma: f64,
    pub decay: f64,
    pub nugget: f64,
}

impl GammaParams {
    pub fn new(sigma: f64, decay: f64, nugget: f64) -> Self {
        GammaParams {
            sigma,
            decay,
            nugget,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GammaField {
    Sigma,
    Decay,
    Nugget,
}

impl GammaField {
    const ALL: [GammaField; 3] = [GammaField::Sigma, GammaField::Decay, GammaField::Nugget];

    fn name(self) -> &'static str {
        match self {
            GammaField::Sigma => "sigma",
            GammaField::Decay => "decay",
            GammaField::Nugget => "nugget",
        }
    }
}

impl GammaParams {
    fn field(&self, f: GammaField) -> &f64 {
        match f {
            GammaField::Sigma => &self.sigma,
            GammaField::Decay => &self.decay,
            GammaField::Nugget => &self.nugget,
        }
    }

    fn field_mut(&mut self, f: GammaField) -> &mut f64 {
        match f {
            GammaField::Sigma => &mut self.sigma,
            GammaField::Decay => &mut self.decay,
            GammaField::Nugget => &mut self.nugget,
        }
    }
}

/// Parameters of one space-time covariance `A Γ₀ Aᵀ + Γ_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovParams {
    pub nu: [f64; 18],
    pub common: GammaParams,
    /// One kernel per location.
    pub local: Vec<GammaParams>,
}

impl CovParams {
    pub fn new(n_locations: usize) -> Self {
        CovParams {
            nu: [0.0; 18],
            common: GammaParams::new(1.0, 1.0, 1.0),
            local: vec![GammaParams::new(1.0, 1.0, 1.0); n_locations],
        }
    }
}

/// Exponential temporal weights of one land use; `rho2 = 1 − rho0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalWeights {
    pub rho0: f64,
    pub rho1: f64,
}

impl TemporalWeights {
    pub fn rho2(&self) -> f64 {
        1.0 - self.rho0
    }
}

/// Centroid subtracted from coordinates before they enter the mean and band
/// formulas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub lat: f64,
    pub long: f64,
}

/// Which likelihood factor a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    /// Marginal law of the NWP block.
    Marginal,
    /// Law of observations given the NWP block.
    Conditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Real,
    /// Strictly positive; handled on the log scale by the optimizer.
    Positive,
}

/// Address of one scalar parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Param {
    /// `β₀..β₁₁`: indices 0..=6 marginal, 7..=11 conditional.
    Beta(usize),
    /// `α₀` for a 0-based land-use position.
    AlphaLand(usize),
    /// `α₁` for a 0-based NWP location.
    AlphaSite(usize),
    AlphaLat,
    AlphaLong,
    Nu(Part, usize),
    Common(Part, GammaField),
    Local(Part, usize, GammaField),
    Rho0(usize),
    Rho1(usize),
    /// `φ_{c,k}` stored as `(k, c)`, both 0-based.
    Phi(usize, usize),
}

impl Param {
    pub fn part(self) -> Part {
        match self {
            Param::Beta(i) if i <= 6 => Part::Marginal,
            Param::AlphaLand(_) | Param::AlphaSite(_) => Part::Marginal,
            Param::Nu(p, _) | Param::Common(p, _) | Param::Local(p, _, _) => p,
            _ => Part::Conditional,
        }
    }

    pub fn kind(self) -> Kind {
        match self {
            Param::Common(..) | Param::Local(..) | Param::Rho1(_) => Kind::Positive,
            _ => Kind::Real,
        }
    }

    pub fn name(self) -> String {
        let prefix = |p: Part| match p {
            Part::Marginal => "nwp",
            Part::Conditional => "cond",
        };
        match self {
            Param::Beta(i) => format!("beta_{i}"),
            Param::AlphaLand(l) => format!("alpha0_{}", l + 1),
            Param::AlphaSite(j) => format!("alpha1_{}", j + 1),
            Param::AlphaLat => "alpha_2".into(),
            Param::AlphaLong => "alpha_3".into(),
            Param::Nu(p, i) => format!("{}.nu_{}", prefix(p), i + 1),
            Param::Common(p, f) => format!("{}.{}_0", prefix(p), f.name()),
            Param::Local(p, j, f) => format!("{}.{}_{}", prefix(p), f.name(), j + 1),
            Param::Rho0(l) => format!("rho0_{}", l + 1),
            Param::Rho1(l) => format!("rho1_{}", l + 1),
            Param::Phi(k, c) => format!("phi{c}_{}", k + 1),
        }
    }
}

/// Full parameter pack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub variant: Variant,
    pub origin: Origin,
    /// `β₀..β₆` of the NWP mean harmonics.
    pub beta: [f64; 7],
    /// `α₀` per land use (position `l − 1`).
    pub alpha_land: Vec<f64>,
    /// `α₁` per NWP location.
    pub alpha_site: Vec<f64>,
    pub nwp_cov: CovParams,
    /// `β₇..β₁₁` of the conditional mean harmonics.
    pub beta_cond: [f64; 5],
    pub alpha_lat: f64,
    pub alpha_long: f64,
    /// Temporal weights per land use.
    pub rho: Vec<TemporalWeights>,
    /// `phi[k] = [φ₀,ₖ, φ₁,ₖ, φ₂,ₖ]` for neighbor rank `k`.
    pub phi: [[f64; 3]; 3],
    /// Covariance of observations given NWP, one local kernel per station.
    pub cond_cov: CovParams,
    /// Names of parameters filled in by averaging rather than fitting.
    #[serde(default)]
    pub imputed: Vec<String>,
}

impl Theta {
    /// Neutral pack: unit scales, zero slopes, no transition.
    pub fn neutral(n_land_use: usize, n_nwp: usize, n_obs: usize, origin: Origin) -> Self {
        let mut beta = [0.0; 7];
        beta[0] = 1.0;
        Theta {
            variant: Variant::Full,
            origin,
            beta,
            alpha_land: vec![1.0; n_land_use],
            alpha_site: vec![0.0; n_nwp],
            nwp_cov: CovParams::new(n_nwp),
            beta_cond: [0.0; 5],
            alpha_lat: 0.0,
            alpha_long: 0.0,
            rho: vec![
                TemporalWeights {
                    rho0: 1.0,
                    rho1: 1.0
                };
                n_land_use
            ],
            phi: [[0.0; 3]; 3],
            cond_cov: CovParams::new(n_obs),
            imputed: Vec::new(),
        }
    }

    pub fn n_land_use(&self) -> usize {
        self.alpha_land.len()
    }

    pub fn n_nwp(&self) -> usize {
        self.alpha_site.len()
    }

    pub fn n_obs(&self) -> usize {
        self.cond_cov.local.len()
    }

    fn cov(&self, p: Part) -> &CovParams {
        match p {
            Part::Marginal => &self.nwp_cov,
            Part::Conditional => &self.cond_cov,
        }
    }

    fn cov_mut(&mut self, p: Part) -> &mut CovParams {
        match p {
            Part::Marginal => &mut self.nwp_cov,
            Part::Conditional => &mut self.cond_cov,
        }
    }

    /// Every scalar parameter, in the canonical order.
    pub fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        out.extend((0..7).map(Param::Beta));
        out.extend((0..self.n_land_use()).map(Param::AlphaLand));
        out.extend((0..self.n_nwp()).map(Param::AlphaSite));
        self.push_cov(Part::Marginal, &mut out);
        out.extend((7..12).map(Param::Beta));
        out.push(Param::AlphaLat);
        out.push(Param::AlphaLong);
        for l in 0..self.n_land_use() {
            out.push(Param::Rho0(l));
            out.push(Param::Rho1(l));
        }
        for k in 0..3 {
            out.extend((0..3).map(|c| Param::Phi(k, c)));
        }
        self.push_cov(Part::Conditional, &mut out);
        out
    }

    fn push_cov(&self, part: Part, out: &mut Vec<Param>) {
        out.extend((0..18).map(|i| Param::Nu(part, i)));
        out.extend(GammaField::ALL.iter().map(|&f| Param::Common(part, f)));
        for j in 0..self.cov(part).local.len() {
            out.extend(GammaField::ALL.iter().map(|&f| Param::Local(part, j, f)));
        }
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Beta(i) if i <= 6 => self.beta[i],
            Param::Beta(i) => self.beta_cond[i - 7],
            Param::AlphaLand(l) => self.alpha_land[l],
            Param::AlphaSite(j) => self.alpha_site[j],
            Param::AlphaLat => self.alpha_lat,
            Param::AlphaLong => self.alpha_long,
            Param::Nu(part, i) => self.cov(part).nu[i],
            Param::Common(part, f) => *self.cov(part).common.field(f),
            Param::Local(part, j, f) => *self.cov(part).local[j].field(f),
            Param::Rho0(l) => self.rho[l].rho0,
            Param::Rho1(l) => self.rho[l].rho1,
            Param::Phi(k, c) => self.phi[k][c],
        }
    }

    pub fn get_mut(&mut self, p: Param) -> &mut f64 {
        match p {
            Param::Beta(i) if i <= 6 => &mut self.beta[i],
            Param::Beta(i) => &mut self.beta_cond[i - 7],
            Param::AlphaLand(l) => &mut self.alpha_land[l],
            Param::AlphaSite(j) => &mut self.alpha_site[j],
            Param::AlphaLat => &mut self.alpha_lat,
            Param::AlphaLong => &mut self.alpha_long,
            Param::Nu(part, i) => &mut self.cov_mut(part).nu[i],
            Param::Common(part, f) => self.cov_mut(part).common.field_mut(f),
            Param::Local(part, j, f) => self.cov_mut(part).local[j].field_mut(f),
            Param::Rho0(l) => &mut self.rho[l].rho0,
            Param::Rho1(l) => &mut self.rho[l].rho1,
            Param::Phi(k, c) => &mut self.phi[k][c],
        }
    }

    /// Check positivity and finiteness of every parameter.
    pub fn validate(&self) -> Result<()> {
        for p in self.params() {
            let v = self.get(p);
            let ok = match p.kind() {
                Kind::Real => v.is_finite(),
                Kind::Positive => v.is_finite() && v > 0.0,
            };
            if !ok {
                return Err(Error::InvalidInput(format!("parameter {} = {v}", p.name())));
            }
        }
        if self.n_land_use() != self.rho.len() {
            return Err(Error::Shape("land-use parameter counts differ".into()));
        }
        if self.nwp_cov.local.len() != self.n_nwp() {
            return Err(Error::Shape("NWP location parameter counts differ".into()));
        }
        Ok(())
    }

    /// Copy of the pack sized for `n_nwp` NWP locations and `n_obs` stations.
    /// Locations beyond the fitted ones receive the average of the fitted
    /// per-location values and are recorded in `imputed`.
    pub fn extended_for(&self, n_nwp: usize, n_obs: usize) -> Result<Theta> {
        if n_nwp < self.n_nwp() || n_obs < self.n_obs() {
            return Err(Error::Shape(format!(
                "cannot shrink parameter pack from ({}, {}) to ({n_nwp}, {n_obs}) locations",
                self.n_nwp(),
                self.n_obs()
            )));
        }
        let mut out = self.clone();
        let avg_site = mean(&self.alpha_site);
        for j in self.n_nwp()..n_nwp {
            out.alpha_site.push(avg_site);
            out.imputed.push(Param::AlphaSite(j).name());
        }
        extend_local(&mut out.nwp_cov, n_nwp, Part::Marginal, &mut out.imputed);
        extend_local(&mut out.cond_cov, n_obs, Part::Conditional, &mut out.imputed);
        Ok(out)
    }

    /// Render as `name=value` lines; `se` adds a `#se:name=value` line after
    /// each parameter that has one.
    pub fn to_text(&self, se: Option<&BTreeMap<String, f64>>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant.as_str());
        let _ = writeln!(s, "origin_lat={}", self.origin.lat);
        let _ = writeln!(s, "origin_long={}", self.origin.long);
        for p in self.params() {
            let name = p.name();
            let _ = writeln!(s, "{name}={}", self.get(p));
            if let Some(v) = se.and_then(|m| m.get(&name)) {
                let _ = writeln!(s, "#se:{name}={v}");
            }
        }
        for name in &self.imputed {
            let _ = writeln!(s, "#imputed:{name}");
        }
        s
    }

    /// Parse the text format. Returns the pack and any standard errors.
    pub fn from_text(text: &str) -> Result<(Theta, BTreeMap<String, f64>)> {
        let mut values = BTreeMap::new();
        let mut se = BTreeMap::new();
        let mut imputed = Vec::new();
        let mut variant = Variant::Full;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let ctx = || format!("parameter line {}", lineno + 1);
            if let Some(rest) = line.strip_prefix("#imputed:") {
                imputed.push(rest.trim().to_string());
                continue;
            }
            let (target, body) = match line.strip_prefix("#se:") {
                Some(rest) => (&mut se, rest),
                None if line.starts_with('#') => continue,
                None => (&mut values, line),
            };
            let (name, value) = body
                .split_once('=')
                .ok_or_else(|| Error::parse(ctx(), "expected name=value"))?;
            let name = name.trim().to_string();
            if name == "variant" {
                variant = Variant::parse(value.trim())?;
                continue;
            }
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|e| Error::parse(ctx(), format!("{name}: {e}")))?;
            if target.insert(name.clone(), v).is_some() {
                return Err(Error::parse(ctx(), format!("duplicate parameter {name}")));
            }
        }
        let count = |prefix: &str| {
            values
                .keys()
                .filter(|k| {
                    k.strip_prefix(prefix)
                        .is_some_and(|r| r.parse::<usize>().is_ok_and(|n| n >= 1))
                })
                .count()
        };
        let n_lu = count("alpha0_");
        let n_nwp = count("alpha1_");
        let n_obs = count("cond.sigma_");
        let origin = Origin {
            lat: take(&mut values, "origin_lat")?,
            long: take(&mut values, "origin_long")?,
        };
        let mut theta = Theta::neutral(n_lu, n_nwp, n_obs, origin);
        theta.variant = variant;
        for p in theta.params() {
            *theta.get_mut(p) = take(&mut values, &p.name())?;
        }
        if let Some(extra) = values.keys().next() {
            return Err(Error::parse("parameters", format!("unexpected parameter {extra}")));
        }
        theta.imputed = imputed;
        theta.validate()?;
        Ok((theta, se))
    }
}

fn take(values: &mut BTreeMap<String, f64>, name: &str) -> Result<f64> {
    values
        .remove(name)
        .ok_or_else(|| Error::parse("parameters", format!("missing parameter {name}")))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn extend_local(cov: &mut CovParams, n: usize, part: Part, imputed: &mut Vec<String>) {
    let fitted = cov.local.len();
    if fitted == 0 || n == fitted {
        return;
    }
    let avg = |f: fn(&GammaParams) -> f64| cov.local.iter().map(f).sum::<f64>() / fitted as f64;
    let g = GammaParams::new(avg(|g| g.sigma), avg(|g| g.decay), avg(|g| g.nugget));
    for j in fitted..n {
        cov.local.push(g);
        for f in GammaField::ALL {
            imputed.push(Param::Local(part, j, f).name());
        }
    }
}

/// Which parameters the optimizer moves, and how they map to an
/// unconstrained vector (positive parameters on the log scale).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    free: Vec<Param>,
}

impl ParamLayout {
    pub fn new(free: Vec<Param>) -> Self {
        ParamLayout { free }
    }

    pub fn params(&self) -> &[Param] {
        &self.free
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    /// Restriction to one likelihood factor.
    pub fn part(&self, part: Part) -> ParamLayout {
        ParamLayout::new(self.free.iter().copied().filter(|p| p.part() == part).collect())
    }

    pub fn pack(&self, theta: &Theta) -> Vec<f64> {
        self.free
            .iter()
            .map(|&p| match p.kind() {
                Kind::Real => theta.get(p),
                Kind::Positive => theta.get(p).ln(),
            })
            .collect()
    }

    pub fn unpack(&self, base: &Theta, x: &[f64]) -> Theta {
        let mut theta = base.clone();
        self.unpack_into(&mut theta, x);
        theta
    }

    pub fn unpack_into(&self, theta: &mut Theta, x: &[f64]) {
        for (&p, &v) in self.free.iter().zip(x) {
            *theta.get_mut(p) = match p.kind() {
                Kind::Real => v,
                Kind::Positive => v.exp(),
            };
        }
    }

    /// Derivative of each natural parameter with respect to its unconstrained
    /// coordinate, evaluated at `theta`.
    pub fn jacobian_diag(&self, theta: &Theta) -> Vec<f64> {
        self.free
            .iter()
            .map(|&p| match p.kind() {
                Kind::Real => 1.0,
                Kind::Positive => theta.get(p),
            })
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.free.iter().map(|p| p.name()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Theta {
        let mut t = Theta::neutral(2, 3, 2, Origin { lat: 42.0, long: -88.0 });
        for (i, p) in t.params().into_iter().enumerate() {
            let v = t.get_mut(p);
            *v = match p.kind() {
                Kind::Real => 0.1 * i as f64 - 1.3,
                Kind::Positive => 0.05 + 0.01 * i as f64,
            };
        }
        t.variant = Variant::TemporalOnly;
        t
    }

    #[test]
    fn names_are_unique() {
        let t = sample();
        let names: std::collections::HashSet<_> = t.params().iter().map(|p| p.name()).collect();
        assert_eq!(names.len(), t.params().len());
        assert!(names.contains("beta_11"));
        assert!(names.contains("cond.sigma_0"));
        assert!(names.contains("nwp.nugget_3"));
        assert!(names.contains("phi2_3"));
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let t = sample();
        let mut se = BTreeMap::new();
        se.insert("beta_3".to_string(), 0.25);
        let text = t.to_text(Some(&se));
        assert!(text.contains("#se:beta_3=0.25"));
        let (back, se_back) = Theta::from_text(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(se_back, se);
    }

    #[test]
    fn parse_errors() {
        let text = sample().to_text(None);
        let missing: String = text.lines().filter(|l| !l.starts_with("beta_4")).map(|l| format!("{l}\n")).collect();
        assert!(Theta::from_text(&missing).is_err());
        assert!(Theta::from_text(&format!("{text}bogus=1\n")).is_err());
        assert!(Theta::from_text(&text.replace("beta_0=", "beta_0=x")).is_err());
    }

    #[test]
    fn layout_roundtrip_and_log_scale() {
        let t = sample();
        let layout = ParamLayout::new(t.params());
        let x = layout.pack(&t);
        let p = t.params().iter().position(|p| *p == Param::Common(Part::Marginal, GammaField::Sigma)).unwrap();
        assert!((x[p] - t.nwp_cov.common.sigma.ln()).abs() < 1e-15);
        let back = layout.unpack(&t, &x);
        for q in t.params() {
            assert!((back.get(q) - t.get(q)).abs() <= 1e-14 * t.get(q).abs().max(1.0));
        }
    }

    #[test]
    fn extension_averages_local_parameters() {
        let t = sample();
        let e = t.extended_for(4, 3).unwrap();
        assert_eq!(e.n_nwp(), 4);
        assert_eq!(e.n_obs(), 3);
        let avg = (t.cond_cov.local[0].sigma + t.cond_cov.local[1].sigma) / 2.0;
        assert!((e.cond_cov.local[2].sigma - avg).abs() < 1e-15);
        assert!(e.imputed.contains(&"cond.sigma_3".to_string()));
        assert!(t.extended_for(2, 2).is_err());
    }

    #[test]
    fn rho2_complements_rho0() {
        let w = TemporalWeights { rho0: 0.7, rho1: 0.3 };
        assert!((w.rho0 + w.rho2() - 1.0).abs() < 1e-15);
    }
}
