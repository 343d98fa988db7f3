//! Parametrized piecewise-constant coefficient fields.
//!
//! A field is constant on the cells of an `n_eps x n_eps` grid (the ε-scale).
//! Two families are provided: i.i.d. random jumps and a layered battery
//! stack whose active material conductivity varies per cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LodError, Result};
use crate::grid::{GridHierarchy, Patch};
use crate::seed::{child_rng, Stream};

/// How cell values are mapped to network features in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Affine map of `[lo, hi]` onto `[-1, 1]`.
    #[default]
    Affine,
    /// Affine map of `[ln lo, ln hi]` onto `[-1, 1]`.
    Log,
}

/// Material label of an ε-cell in a battery layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Material {
    /// Anode collector.
    Ac,
    /// Cathode collector.
    Cc,
    /// Active material, conductivity given per cell.
    Am,
}

/// Density, specific heat capacity and conductivity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialProperties {
    pub density: f64,
    pub heat_capacity: f64,
    pub conductivity: f64,
}

pub const ANODE_COLLECTOR: MaterialProperties = MaterialProperties {
    density: 8710.2,
    heat_capacity: 384.65,
    conductivity: 398.65,
};
pub const CATHODE_COLLECTOR: MaterialProperties = MaterialProperties {
    density: 2706.77,
    heat_capacity: 897.8,
    conductivity: 236.3,
};
/// Conductivity of the active material is a parameter; the stored value is
/// the lower end of its range.
pub const ACTIVE_MATERIAL: MaterialProperties = MaterialProperties {
    density: 2094.302,
    heat_capacity: 1010.119,
    conductivity: 1.0,
};
pub const ACTIVE_CONDUCTIVITY_RANGE: (f64, f64) = (1.0, 5.0);

impl MaterialProperties {
    /// Diffusivity `λ / (ρ c_p)`.
    pub fn diffusivity(&self) -> f64 {
        self.conductivity / (self.density * self.heat_capacity)
    }

    pub fn with_conductivity(self, conductivity: f64) -> Self {
        MaterialProperties {
            conductivity,
            ..self
        }
    }
}

impl Material {
    pub fn properties(self) -> MaterialProperties {
        match self {
            Material::Ac => ANODE_COLLECTOR,
            Material::Cc => CATHODE_COLLECTOR,
            Material::Am => ACTIVE_MATERIAL,
        }
    }

    /// Label used in configuration signatures (0 is reserved for unlabelled cells).
    pub fn code(self) -> u8 {
        match self {
            Material::Ac => 1,
            Material::Cc => 2,
            Material::Am => 3,
        }
    }
}

/// Piecewise-constant scalar coefficient on an ε-grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    n_eps: usize,
    values: Vec<f64>,
    lo: f64,
    hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kinds: Option<Vec<u8>>,
    #[serde(default)]
    normalization: Normalization,
}

impl CoefficientField {
    /// Field with row-major cell values and declared bounds `lo <= a <= hi`.
    pub fn new(n_eps: usize, values: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if n_eps == 0 || values.len() != n_eps * n_eps {
            return Err(LodError::Dimension(format!(
                "expected {} cell values for n_eps = {n_eps}, got {}",
                n_eps * n_eps,
                values.len()
            )));
        }
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(LodError::Config(format!(
                "invalid coefficient bounds [{lo}, {hi}]"
            )));
        }
        for (cell, &v) in values.iter().enumerate() {
            if !(v > 0.0) {
                return Err(LodError::NonPositiveCoefficient { cell, value: v });
            }
            // bounds are checked with a relative slack for rounding in generators
            let slack = 1e-12 * hi;
            if v < lo - slack || v > hi + slack {
                return Err(LodError::OutOfRange {
                    cell,
                    value: v,
                    lo,
                    hi,
                });
            }
        }
        Ok(CoefficientField {
            n_eps,
            values,
            lo,
            hi,
            kinds: None,
            normalization: Normalization::Affine,
        })
    }

    pub fn constant(n_eps: usize, value: f64) -> Result<Self> {
        Self::new(n_eps, vec![value; n_eps * n_eps], value, value)
    }

    pub fn with_kinds(mut self, kinds: Vec<u8>) -> Result<Self> {
        if kinds.len() != self.values.len() {
            return Err(LodError::Dimension(
                "material map length differs from cell count".into(),
            ));
        }
        self.kinds = Some(kinds);
        Ok(self)
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn n_eps(&self) -> usize {
        self.n_eps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Material labels per cell (all zero for unlabelled fields).
    pub fn kinds(&self) -> Vec<u8> {
        self.kinds
            .clone()
            .unwrap_or_else(|| vec![0; self.values.len()])
    }

    pub fn cell(&self, cx: usize, cy: usize) -> f64 {
        self.values[cy * self.n_eps + cx]
    }

    /// Field multiplied by `c > 0` (bounds scale along).
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out.lo *= c;
        out.hi *= c;
        out
    }

    /// Checks that ε-cells are unions of fine cells.
    pub fn check_compatible(&self, grid: &GridHierarchy) -> Result<()> {
        if grid.n() % self.n_eps != 0 {
            return Err(LodError::Config(format!(
                "coefficient grid of {} cells per side does not align with {} fine cells per side",
                self.n_eps,
                grid.n()
            )));
        }
        Ok(())
    }

    /// Value on fine element `(fx, fy)`.
    pub fn fine_value(&self, grid: &GridHierarchy, fine_element: usize) -> f64 {
        let s = grid.n() / self.n_eps;
        let (fx, fy) = grid.fine_element_pos(fine_element);
        self.cell(fx / s, fy / s)
    }

    /// Values on every fine element, row-major.
    pub fn fine_values(&self, grid: &GridHierarchy) -> Result<Vec<f64>> {
        self.check_compatible(grid)?;
        Ok((0..grid.num_fine_elements())
            .map(|e| self.fine_value(grid, e))
            .collect())
    }

    /// ε-cell index range `[x0, x1) x [y0, y1)` meeting the patch.
    pub fn patch_cells(&self, patch: &Patch) -> (usize, usize, usize, usize) {
        let m = patch.grid().m();
        let n = self.n_eps;
        let b = patch.block;
        (
            b.x0 * n / m,
            (b.x1 * n).div_ceil(m),
            b.y0 * n / m,
            (b.y1 * n).div_ceil(m),
        )
    }

    /// Maps a raw value to `[-1, 1]` according to the field's normalization.
    pub fn normalize(&self, v: f64) -> f64 {
        let (lo, hi, v) = match self.normalization {
            Normalization::Affine => (self.lo, self.hi, v),
            Normalization::Log => (self.lo.ln(), self.hi.ln(), v.ln()),
        };
        if hi > lo {
            2.0 * (v - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }

    /// Values of all ε-cells intersecting the patch, row-major.
    pub fn restrict(&self, patch: &Patch, normalize: bool) -> ParamVector {
        let (x0, x1, y0, y1) = self.patch_cells(patch);
        let mut values = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for cy in y0..y1 {
            for cx in x0..x1 {
                let v = self.cell(cx, cy);
                values.push(if normalize { self.normalize(v) } else { v });
            }
        }
        ParamVector { values }
    }
}

/// Parametrization vector `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// I.i.d. uniform cell values on `[lo, hi]`; draw `k` depends only on `(seed, k)`.
pub fn gen_random_jumps(
    seed: u64,
    n_eps: usize,
    lo: f64,
    hi: f64,
    count: usize,
) -> Result<Vec<(ParamVector, CoefficientField)>> {
    gen_random_jumps_stream(seed, Stream::TrainCoefficients, 0, n_eps, lo, hi, count)
}

/// Like [`gen_random_jumps`] on an explicit stream, starting at index `first`.
pub fn gen_random_jumps_stream(
    seed: u64,
    stream: Stream,
    first: usize,
    n_eps: usize,
    lo: f64,
    hi: f64,
    count: usize,
) -> Result<Vec<(ParamVector, CoefficientField)>> {
    if !(lo > 0.0) || !(hi >= lo) {
        return Err(LodError::Config(format!(
            "random jumps need 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    if count == 0 {
        return Err(LodError::Config(
            "at least one field must be generated".into(),
        ));
    }
    (first..first + count)
        .map(|k| {
            let mut rng = child_rng(seed, stream, k as u64);
            let values: Vec<f64> = (0..n_eps * n_eps)
                .map(|_| {
                    if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    }
                })
                .collect();
            let field = CoefficientField::new(n_eps, values.clone(), lo, hi)?;
            Ok((ParamVector { values }, field))
        })
        .collect()
}

/// Horizontal strip layout: one material per row of ε-cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryGeometry {
    pub n_eps: usize,
    /// Material of each ε-row, bottom to top.
    pub rows: Vec<Material>,
}

impl BatteryGeometry {
    /// Repeats `period` until `n_eps` rows are filled.
    pub fn periodic(n_eps: usize, period: &[Material]) -> Result<Self> {
        if period.is_empty() || n_eps % period.len() != 0 {
            return Err(LodError::Config(format!(
                "strip period of length {} does not tile {n_eps} rows",
                period.len()
            )));
        }
        Ok(BatteryGeometry {
            n_eps,
            rows: period.iter().copied().cycle().take(n_eps).collect(),
        })
    }

    /// Default stack: 30 rows per side, `AC | AM | CC | AM | AC` repeated, so
    /// every strip has width 1/30 and the layout repeats with period 1/6.
    pub fn default_stack() -> Self {
        use Material::*;
        Self::periodic(30, &[Ac, Am, Cc, Am, Ac]).expect("30 rows tile by 5")
    }

    pub fn material(&self, _cx: usize, cy: usize) -> Material {
        self.rows[cy]
    }

    pub fn materials(&self) -> Vec<Material> {
        (0..self.n_eps * self.n_eps)
            .map(|k| self.rows[k / self.n_eps])
            .collect()
    }

    /// Number of active-material cells (length of the parameter vector).
    pub fn num_active_cells(&self) -> usize {
        self.rows.iter().filter(|&&m| m == Material::Am).count() * self.n_eps
    }

    /// Smallest and largest attainable diffusivity.
    pub fn bounds(&self) -> (f64, f64) {
        let (lam_lo, lam_hi) = ACTIVE_CONDUCTIVITY_RANGE;
        let cands = [
            ANODE_COLLECTOR.diffusivity(),
            CATHODE_COLLECTOR.diffusivity(),
            ACTIVE_MATERIAL.with_conductivity(lam_lo).diffusivity(),
            ACTIVE_MATERIAL.with_conductivity(lam_hi).diffusivity(),
        ];
        let present: Vec<f64> = cands
            .iter()
            .enumerate()
            .filter(|(i, _)| match i {
                0 => self.rows.contains(&Material::Ac),
                1 => self.rows.contains(&Material::Cc),
                _ => self.rows.contains(&Material::Am),
            })
            .map(|(_, &v)| v)
            .collect();
        (
            present.iter().copied().fold(f64::INFINITY, f64::min),
            present.iter().copied().fold(0.0, f64::max),
        )
    }
}

/// Battery diffusivity field from per-cell active-material conductivities
/// (row-major over the active cells).
pub fn battery_layout(
    active_conductivity: &[f64],
    geometry: &BatteryGeometry,
) -> Result<CoefficientField> {
    let (lam_lo, lam_hi) = ACTIVE_CONDUCTIVITY_RANGE;
    if active_conductivity.len() != geometry.num_active_cells() {
        return Err(LodError::Dimension(format!(
            "geometry has {} active cells, got {} conductivities",
            geometry.num_active_cells(),
            active_conductivity.len()
        )));
    }
    let mut next = active_conductivity.iter().enumerate();
    let mut values = Vec::with_capacity(geometry.n_eps * geometry.n_eps);
    for (cell, mat) in geometry.materials().into_iter().enumerate() {
        let a = match mat {
            Material::Am => {
                let (_, &lam) = next.next().expect("length checked");
                if !(lam_lo..=lam_hi).contains(&lam) {
                    return Err(LodError::OutOfRange {
                        cell,
                        value: lam,
                        lo: lam_lo,
                        hi: lam_hi,
                    });
                }
                ACTIVE_MATERIAL.with_conductivity(lam).diffusivity()
            }
            other => other.properties().diffusivity(),
        };
        values.push(a);
    }
    let (lo, hi) = geometry.bounds();
    let kinds = geometry.materials().iter().map(|m| m.code()).collect();
    Ok(CoefficientField::new(geometry.n_eps, values, lo, hi)?
        .with_kinds(kinds)?
        .with_normalization(Normalization::Log))
}

/// Random battery parametrizations with i.i.d. uniform active conductivities.
pub fn gen_battery(
    seed: u64,
    stream: Stream,
    first: usize,
    geometry: &BatteryGeometry,
    count: usize,
) -> Result<Vec<(ParamVector, CoefficientField)>> {
    let (lam_lo, lam_hi) = ACTIVE_CONDUCTIVITY_RANGE;
    (first..first + count)
        .map(|k| {
            let mut rng = child_rng(seed, stream, k as u64);
            let lam: Vec<f64> = (0..geometry.num_active_cells())
                .map(|_| rng.random_range(lam_lo..=lam_hi))
                .collect();
            let field = battery_layout(&lam, geometry)?;
            Ok((ParamVector { values: lam }, field))
        })
        .collect()
}

/// Header of a serialized coefficient ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHeader {
    pub m: usize,
    pub r: usize,
    pub n_eps: usize,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub index: usize,
    pub params: Vec<f64>,
    pub field: CoefficientField,
}

/// A set of coefficient fields with the mesh they were generated for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub header: EnsembleHeader,
    pub fields: Vec<FieldRecord>,
}

impl Ensemble {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LodError::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_jumps_respect_bounds_and_are_deterministic() {
        let a = gen_random_jumps(0, 36, 0.1, 1.0, 40).unwrap();
        assert_eq!(a.len(), 40);
        for (p, f) in &a {
            assert_eq!(p.len(), 36 * 36);
            assert!(f.values().iter().all(|&v| (0.1..=1.0).contains(&v)));
        }
        let b = gen_random_jumps(0, 36, 0.1, 1.0, 3).unwrap();
        assert_eq!(a[..3], b[..]);
        assert_ne!(a[0].1, a[1].1);
    }

    #[test]
    fn degenerate_range_gives_constant_field() {
        let a = gen_random_jumps(3, 4, 0.5, 0.5, 1).unwrap();
        assert!(a[0].1.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn battery_diffusivities() {
        assert!((ANODE_COLLECTOR.diffusivity() - 1.1899e-4).abs() < 1e-8);
        assert!((CATHODE_COLLECTOR.diffusivity() - 9.724e-5).abs() < 1e-8);
        assert!((ACTIVE_MATERIAL.diffusivity() - 4.727e-7).abs() < 1e-10);
        let g = BatteryGeometry::default_stack();
        let lam = vec![2.0; g.num_active_cells()];
        let f = battery_layout(&lam, &g).unwrap();
        assert_eq!(f.cell(0, 0), ANODE_COLLECTOR.diffusivity());
        assert_eq!(
            f.cell(3, 1),
            ACTIVE_MATERIAL.with_conductivity(2.0).diffusivity()
        );
        assert_eq!(f.cell(7, 2), CATHODE_COLLECTOR.diffusivity());
    }

    #[test]
    fn battery_rejects_out_of_range_conductivity() {
        let g = BatteryGeometry::default_stack();
        let mut lam = vec![2.0; g.num_active_cells()];
        lam[4] = 5.5;
        assert!(matches!(
            battery_layout(&lam, &g),
            Err(LodError::OutOfRange { .. })
        ));
    }

    #[test]
    fn restriction_counts_and_locality() {
        let g = GridHierarchy::new(6, 6).unwrap();
        let patch = g.patch(g.coarse_element(2, 3), 1).unwrap();
        let f = gen_random_jumps(1, 36, 0.1, 1.0, 1).unwrap().remove(0).1;
        assert_eq!(f.restrict(&patch, true).len(), 324);
        // change a cell outside the patch
        let mut values = f.values().to_vec();
        values[0] = 0.2;
        let f2 = CoefficientField::new(36, values, 0.1, 1.0).unwrap();
        assert_eq!(f.restrict(&patch, true), f2.restrict(&patch, true));
        let c = CoefficientField::constant(36, 0.7).unwrap();
        let p = c.restrict(&patch, true);
        assert!(p.values.iter().all(|&v| v == p.values[0]));
    }

    #[test]
    fn normalization_hits_the_unit_interval_ends() {
        let f = CoefficientField::new(1, vec![0.55], 0.1, 1.0).unwrap();
        assert!((f.normalize(0.1) + 1.0).abs() < 1e-15);
        assert!((f.normalize(1.0) - 1.0).abs() < 1e-15);
        let f = f.with_normalization(Normalization::Log);
        assert!((f.normalize(0.1f64.sqrt()) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_values() {
        assert!(matches!(
            CoefficientField::new(1, vec![0.0], 0.1, 1.0),
            Err(LodError::NonPositiveCoefficient { .. })
        ));
    }

    #[test]
    fn ensemble_json_roundtrip() {
        let fields = gen_random_jumps(2, 4, 0.1, 1.0, 2).unwrap();
        let ens = Ensemble {
            header: EnsembleHeader {
                m: 2,
                r: 2,
                n_eps: 4,
                lo: 0.1,
                hi: 1.0,
                seed: 2,
                kind: "random_jumps".into(),
            },
            fields: fields
                .into_iter()
                .enumerate()
                .map(|(index, (p, field))| FieldRecord {
                    index,
                    params: p.values,
                    field,
                })
                .collect(),
        };
        assert_eq!(Ensemble::from_json(&ens.to_json()).unwrap(), ens);
    }
}
