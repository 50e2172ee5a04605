use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// The compact matrix groups supported by the crate.
///
/// Tori are represented block-diagonally with one 2x2 rotation per
/// coordinate, so every kind has a real or complex square matrix form.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GroupKind {
    TorusPower(usize),
    SpecialOrthogonal(usize),
    Unitary(usize),
    Product(Vec<GroupKind>),
}

/// A non-product factor of a kind together with its placement inside the
/// block-diagonal matrix and the concatenated coefficient vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Leaf {
    pub kind: GroupKind,
    pub mat_offset: usize,
    pub mat_dim: usize,
    pub alg_offset: usize,
    pub alg_dim: usize,
}

impl GroupKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            GroupKind::TorusPower(k) if *k >= 1 => Ok(()),
            GroupKind::SpecialOrthogonal(n) | GroupKind::Unitary(n) if *n >= 2 => Ok(()),
            GroupKind::Product(parts) if !parts.is_empty() => {
                parts.iter().try_for_each(GroupKind::validate)
            }
            other => Err(Error::InvalidKind(format!("{other:?}"))),
        }
    }

    pub fn matrix_dim(&self) -> usize {
        match self {
            GroupKind::TorusPower(k) => 2 * k,
            GroupKind::SpecialOrthogonal(n) | GroupKind::Unitary(n) => *n,
            GroupKind::Product(parts) => parts.iter().map(GroupKind::matrix_dim).sum(),
        }
    }

    pub fn algebra_dim(&self) -> usize {
        match self {
            GroupKind::TorusPower(k) => *k,
            GroupKind::SpecialOrthogonal(n) => n * (n - 1) / 2,
            GroupKind::Unitary(n) => n * n,
            GroupKind::Product(parts) => parts.iter().map(GroupKind::algebra_dim).sum(),
        }
    }

    pub fn is_complex(&self) -> bool {
        match self {
            GroupKind::Unitary(_) => true,
            GroupKind::Product(parts) => parts.iter().any(GroupKind::is_complex),
            _ => false,
        }
    }

    /// All factors are tori, so the transition law is available in closed form.
    pub fn is_abelian(&self) -> bool {
        match self {
            GroupKind::TorusPower(_) => true,
            GroupKind::Product(parts) => parts.iter().all(GroupKind::is_abelian),
            _ => false,
        }
    }

    /// Number of torus factors (one per 2x2 block) over all leaves.
    pub fn torus_coordinates(&self) -> usize {
        match self {
            GroupKind::TorusPower(k) => *k,
            GroupKind::Product(parts) => parts.iter().map(GroupKind::torus_coordinates).sum(),
            _ => 0,
        }
    }

    /// Flattens nested products into their non-product factors.
    pub fn leaves(&self) -> Vec<Leaf> {
        fn walk(kind: &GroupKind, mo: &mut usize, ao: &mut usize, out: &mut Vec<Leaf>) {
            match kind {
                GroupKind::Product(parts) => {
                    for p in parts {
                        walk(p, mo, ao, out);
                    }
                }
                leaf => {
                    let (md, ad) = (leaf.matrix_dim(), leaf.algebra_dim());
                    out.push(Leaf {
                        kind: leaf.clone(),
                        mat_offset: *mo,
                        mat_dim: md,
                        alg_offset: *ao,
                        alg_dim: ad,
                    });
                    *mo += md;
                    *ao += ad;
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut 0, &mut 0, &mut out);
        out
    }

    /// Length of the real feature vector produced by flattening a group matrix.
    pub fn feature_dim(&self) -> usize {
        let n = self.matrix_dim();
        if self.is_complex() {
            2 * n * n
        } else {
            n * n
        }
    }

    pub fn tag(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::TorusPower(k) => write!(f, "torus:{k}"),
            GroupKind::SpecialOrthogonal(n) => write!(f, "so:{n}"),
            GroupKind::Unitary(n) => write!(f, "u:{n}"),
            GroupKind::Product(parts) => {
                write!(f, "prod(")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl FromStr for GroupKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidKind(s.to_string());
        let kind = if let Some(inner) = s.strip_prefix("prod(").and_then(|r| r.strip_suffix(')')) {
            let mut parts = Vec::new();
            let mut depth = 0usize;
            let mut start = 0;
            for (i, c) in inner.char_indices() {
                match c {
                    '(' => depth += 1,
                    ')' => depth = depth.checked_sub(1).ok_or_else(bad)?,
                    ',' if depth == 0 => {
                        parts.push(inner[start..i].parse()?);
                        start = i + 1;
                    }
                    _ => {}
                }
            }
            parts.push(inner[start..].parse()?);
            GroupKind::Product(parts)
        } else {
            let (name, num) = s.split_once(':').ok_or_else(bad)?;
            let n: usize = num.trim().parse().map_err(|_| bad())?;
            match name.trim() {
                "torus" => GroupKind::TorusPower(n),
                "so" => GroupKind::SpecialOrthogonal(n),
                "u" => GroupKind::Unitary(n),
                _ => return Err(bad()),
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl Serialize for GroupKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GroupKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims() {
        assert_eq!(GroupKind::SpecialOrthogonal(3).algebra_dim(), 3);
        assert_eq!(GroupKind::Unitary(4).algebra_dim(), 16);
        assert_eq!(GroupKind::TorusPower(2).matrix_dim(), 4);
        let p = GroupKind::Product(vec![GroupKind::TorusPower(1), GroupKind::Unitary(2)]);
        assert_eq!(p.matrix_dim(), 4);
        assert_eq!(p.algebra_dim(), 5);
        assert!(p.is_complex());
        assert!(!p.is_abelian());
    }

    #[test]
    fn tags_round_trip() {
        for s in ["torus:3", "so:5", "u:2", "prod(torus:1,prod(so:3,u:2))"] {
            let k: GroupKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("so:1".parse::<GroupKind>().is_err());
        assert!("torus:0".parse::<GroupKind>().is_err());
        assert!("sp:4".parse::<GroupKind>().is_err());
    }

    #[test]
    fn leaves_are_offset() {
        let p: GroupKind = "prod(torus:2,so:3)".parse().unwrap();
        let l = p.leaves();
        assert_eq!(l.len(), 2);
        assert_eq!((l[1].mat_offset, l[1].alg_offset), (4, 2));
    }
}
