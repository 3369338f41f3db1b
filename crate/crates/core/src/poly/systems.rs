//! Named polynomial systems: built-in generators and the JSON
//! system-definition format.
//!
//! ```json
//! {
//!   "variables": ["x1", "x2", "x3"],
//!   "equations": [
//!     {"target": "x1", "rhs": [{"coeff": [1, 1], "exps": {"x1": 1, "x3": 1}}]}
//!   ]
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::{Exponents, LiouvilleOperator, Polynomial, VarIndex};
use crate::error::{Error, Result};
use crate::scalar::Rational;

/// A Liouville operator together with its variable table.
#[derive(Clone, Debug)]
pub struct System {
    pub names: Vec<String>,
    pub operator: LiouvilleOperator<Rational>,
}

impl System {
    pub fn dimension(&self) -> usize {
        self.names.len()
    }

    pub fn var(&self, name: &str) -> Option<VarIndex> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| VarIndex(i as u32))
    }

    pub fn name(&self, v: VarIndex) -> &str {
        &self.names[v.index()]
    }

    pub fn from_definition(def: &SystemDefinition) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (i, n) in def.variables.iter().enumerate() {
            if seen.insert(n.as_str(), i).is_some() {
                return Err(Error::Format(format!("variable {n:?} declared twice")));
            }
        }
        let lookup = |name: &str| -> Result<VarIndex> {
            seen.get(name)
                .map(|&i| VarIndex(i as u32))
                .ok_or_else(|| Error::Format(format!("unknown variable {name:?}")))
        };
        let mut terms = Vec::with_capacity(def.equations.len());
        for eq in &def.equations {
            let target = lookup(&eq.target)?;
            terms.push((target, polynomial_from_def(&eq.rhs, &lookup)?));
        }
        let operator = LiouvilleOperator::new(def.variables.len(), terms)?;
        Ok(System {
            names: def.variables.clone(),
            operator,
        })
    }

    pub fn to_definition(&self) -> SystemDefinition {
        SystemDefinition {
            variables: self.names.clone(),
            equations: self
                .operator
                .terms()
                .map(|(t, f)| EquationDef {
                    target: self.name(t).to_string(),
                    rhs: polynomial_to_def(f, &self.names),
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let def: SystemDefinition = serde_json::from_str(&text)?;
        Self::from_definition(&def)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_definition())?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDefinition {
    pub variables: Vec<String>,
    pub equations: Vec<EquationDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationDef {
    pub target: String,
    pub rhs: Vec<TermDef>,
}

/// One monomial: `coeff` is `[numerator, denominator]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDef {
    pub coeff: [IntRepr; 2],
    #[serde(default)]
    pub exps: BTreeMap<String, u32>,
}

/// Integers too large for `i64` are written as decimal strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntRepr {
    Int(i64),
    Text(String),
}

impl IntRepr {
    fn to_bigint(&self) -> Result<BigInt> {
        match self {
            IntRepr::Int(v) => Ok(BigInt::from(*v)),
            IntRepr::Text(s) => s
                .parse()
                .map_err(|_| Error::Format(format!("{s:?} is not an integer"))),
        }
    }

    fn from_bigint(v: &BigInt) -> Self {
        match i64::try_from(v) {
            Ok(x) => IntRepr::Int(x),
            Err(_) => IntRepr::Text(v.to_string()),
        }
    }
}

pub fn polynomial_from_def(
    terms: &[TermDef],
    lookup: &dyn Fn(&str) -> Result<VarIndex>,
) -> Result<Polynomial> {
    let mut out = Vec::with_capacity(terms.len());
    for t in terms {
        let den = t.coeff[1].to_bigint()?;
        if den.is_zero() {
            return Err(Error::Format("zero denominator in coefficient".into()));
        }
        let c = Rational::new(t.coeff[0].to_bigint()?, den);
        let mut pairs = Vec::with_capacity(t.exps.len());
        for (name, &e) in &t.exps {
            pairs.push((lookup(name)?, e));
        }
        out.push((c, Exponents::from_pairs(pairs)));
    }
    Ok(Polynomial::from_terms(out))
}

pub fn polynomial_to_def(p: &Polynomial, names: &[String]) -> Vec<TermDef> {
    p.terms()
        .iter()
        .map(|t| TermDef {
            coeff: [
                IntRepr::from_bigint(t.coeff.numer()),
                IntRepr::from_bigint(t.coeff.denom()),
            ],
            exps: t
                .exps
                .iter()
                .map(|(v, e)| (names[v.index()].clone(), e))
                .collect(),
        })
        .collect()
}

fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

/// `ẋ1 = x1 x3`, `ẋ2 = −x2 x3`, `ẋ3 = x2² − x1²`, variables `x1, x2, x3`.
pub fn kraichnan_orszag() -> System {
    let v = |i: u32| VarIndex(i);
    let m = |c: i64, pairs: &[(u32, u32)]| {
        (
            int(c),
            Exponents::from_pairs(pairs.iter().map(|&(i, e)| (v(i), e))),
        )
    };
    let terms = vec![
        (v(0), Polynomial::from_terms([m(1, &[(0, 1), (2, 1)])])),
        (v(1), Polynomial::from_terms([m(-1, &[(1, 1), (2, 1)])])),
        (
            v(2),
            Polynomial::from_terms([m(1, &[(1, 2)]), m(-1, &[(0, 2)])]),
        ),
    ];
    System {
        names: vec!["x1".into(), "x2".into(), "x3".into()],
        operator: LiouvilleOperator::new(3, terms).expect("static system is well formed"),
    }
}

/// Variable layout of an `n`-site periodic chain in `(r, p)` coordinates:
/// `r_j` has index `j`, `p_j` has index `n + j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainLayout {
    pub sites: usize,
}

impl ChainLayout {
    pub fn r(&self, j: isize) -> VarIndex {
        VarIndex(j.rem_euclid(self.sites as isize) as u32)
    }

    pub fn p(&self, j: isize) -> VarIndex {
        VarIndex((self.sites as isize + j.rem_euclid(self.sites as isize)) as u32)
    }

    /// Site translation `j → j + shift` acting on variable labels.
    pub fn translate(&self, shift: isize) -> impl Fn(VarIndex) -> VarIndex + '_ {
        move |v| {
            let n = self.sites as isize;
            let i = v.index() as isize;
            if i < n {
                self.r(i + shift)
            } else {
                self.p(i - n + shift)
            }
        }
    }
}

/// Periodic FPU β-chain `H = Σ p²/2m + Σ (α r²/2 + β r⁴/4)` in `(r, p)`
/// coordinates: `ṙ_j = (p_j − p_{j−1})/m`, `ṗ_j = V′(r_{j+1}) − V′(r_j)`.
pub fn fpu_chain(n: usize, alpha: Rational, beta: Rational, mass: Rational) -> Result<System> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "a periodic chain needs at least 3 sites, got {n}"
        )));
    }
    if mass <= Rational::zero() {
        return Err(Error::InvalidParameter("mass must be positive".into()));
    }
    let lay = ChainLayout { sites: n };
    let inv_m = Rational::one() / mass;
    let mut terms = Vec::with_capacity(2 * n);
    for j in 0..n as isize {
        let dr = Polynomial::from_terms([
            (inv_m.clone(), Exponents::var(lay.p(j), 1)),
            (-inv_m.clone(), Exponents::var(lay.p(j - 1), 1)),
        ]);
        terms.push((lay.r(j), dr));
        let dp = Polynomial::from_terms([
            (alpha.clone(), Exponents::var(lay.r(j + 1), 1)),
            (-alpha.clone(), Exponents::var(lay.r(j), 1)),
            (beta.clone(), Exponents::var(lay.r(j + 1), 3)),
            (-beta.clone(), Exponents::var(lay.r(j), 3)),
        ]);
        terms.push((lay.p(j), dp));
    }
    let mut names: Vec<String> = (0..n).map(|j| format!("r{j}")).collect();
    names.extend((0..n).map(|j| format!("p{j}")));
    Ok(System {
        names,
        operator: LiouvilleOperator::new(2 * n, terms)?,
    })
}

/// Harmonic chain: the FPU chain with `β = 0`.
pub fn harmonic_chain(n: usize, alpha: Rational, mass: Rational) -> Result<System> {
    fpu_chain(n, alpha, Rational::zero(), mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_round_trip() {
        let ko = kraichnan_orszag();
        let json = serde_json::to_string(&ko.to_definition()).unwrap();
        let back = System::from_definition(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.names, ko.names);
        for (a, b) in ko.operator.terms().zip(back.operator.terms()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn definition_rejects_unknown_names_and_keys() {
        let bad_var = r#"{"variables":["a"],"equations":[{"target":"b","rhs":[]}]}"#;
        let def: SystemDefinition = serde_json::from_str(bad_var).unwrap();
        assert!(System::from_definition(&def).is_err());
        let bad_key = r#"{"variables":["a"],"equations":[],"extra":1}"#;
        assert!(serde_json::from_str::<SystemDefinition>(bad_key).is_err());
        let dup = r#"{"variables":["a","a"],"equations":[]}"#;
        let def: SystemDefinition = serde_json::from_str(dup).unwrap();
        assert!(System::from_definition(&def).is_err());
    }

    #[test]
    fn big_coefficients_survive_as_strings() {
        let def: SystemDefinition = serde_json::from_str(
            r#"{"variables":["a"],"equations":[{"target":"a","rhs":[
                {"coeff":["123456789012345678901234567890","1"],"exps":{"a":2}}]}]}"#,
        )
        .unwrap();
        let sys = System::from_definition(&def).unwrap();
        let back = sys.to_definition();
        assert_eq!(
            back.equations[0].rhs[0].coeff[0],
            IntRepr::Text("123456789012345678901234567890".into())
        );
    }

    #[test]
    fn chain_equations_of_motion() {
        let sys = fpu_chain(4, int(2), int(3), int(1)).unwrap();
        let lay = ChainLayout { sites: 4 };
        // ṙ_0 = p_0 − p_3
        let r0 = sys.operator.rhs(lay.r(0)).unwrap();
        assert_eq!(r0.coeff(&Exponents::var(lay.p(0), 1)), int(1));
        assert_eq!(r0.coeff(&Exponents::var(lay.p(-1), 1)), int(-1));
        // ṗ_3 = 2(r_0 − r_3) + 3(r_0³ − r_3³)
        let p3 = sys.operator.rhs(lay.p(3)).unwrap();
        assert_eq!(p3.coeff(&Exponents::var(lay.r(0), 3)), int(3));
        assert_eq!(p3.coeff(&Exponents::var(lay.r(3), 1)), int(-2));
        assert_eq!(sys.var("p2"), Some(lay.p(2)));
        assert!(fpu_chain(2, int(1), int(0), int(1)).is_err());
    }
}
