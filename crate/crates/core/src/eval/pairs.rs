//! Ordered domain pairs (`A-B` = queries from A, database from B).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::DomainId;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainPair {
    pub query_domain: DomainId,
    pub target_domain: DomainId,
}

impl DomainPair {
    pub fn new(query_domain: DomainId, target_domain: DomainId) -> Self {
        Self {
            query_domain,
            target_domain,
        }
    }

    pub fn is_same_domain(&self) -> bool {
        self.query_domain == self.target_domain
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DomainPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.query_domain, self.target_domain)
    }
}

/// Every ordered cross-domain pair, sorted by query then target domain.
pub fn all_ordered_pairs(domains: &BTreeSet<DomainId>) -> Vec<DomainPair> {
    let mut out = Vec::new();
    for a in domains {
        for b in domains {
            if a != b {
                out.push(DomainPair::new(a.clone(), b.clone()));
            }
        }
    }
    out
}

/// The twelve DomainNet pairs commonly reported, in their customary order.
pub const DOMAINNET_PAIRS: [&str; 12] = [
    "C-S", "S-C", "I-R", "R-I", "I-S", "S-I", "P-C", "C-P", "P-Q", "Q-P", "Q-R", "R-Q",
];

/// All twelve Office-Home pairs, in their customary order.
pub const OFFICE_HOME_PAIRS: [&str; 12] = [
    "Ar-Cl", "Ar-Pr", "Ar-Rw", "Cl-Ar", "Cl-Pr", "Cl-Rw", "Pr-Ar", "Pr-Cl", "Pr-Rw", "Rw-Ar", "Rw-Cl", "Rw-Pr",
];

/// Standard short names for the Office-Home and DomainNet domains.
const ABBREVIATIONS: &[(&str, &[&str])] = &[
    ("ar", &["art"]),
    ("cl", &["clipart"]),
    ("pr", &["product"]),
    ("rw", &["real world", "real_world", "realworld", "real-world"]),
    ("c", &["clipart"]),
    ("i", &["infograph"]),
    ("p", &["painting"]),
    ("q", &["quickdraw"]),
    ("r", &["real"]),
    ("s", &["sketch"]),
];

/// Resolves a domain token: exact name, then a standard abbreviation, then a
/// unique prefix.
pub fn resolve_domain(token: &str, domains: &BTreeSet<DomainId>) -> Result<DomainId> {
    let t = token.trim().to_lowercase();
    if let Some(d) = domains.iter().find(|d| d.as_str() == t) {
        return Ok(d.clone());
    }
    if let Some((_, names)) = ABBREVIATIONS.iter().find(|(abbr, _)| *abbr == t) {
        if let Some(d) = domains.iter().find(|d| names.contains(&d.as_str())) {
            return Ok(d.clone());
        }
    }
    let prefixed: Vec<_> = domains
        .iter()
        .filter(|d| !t.is_empty() && d.as_str().starts_with(&t))
        .collect();
    match prefixed.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(Error::InvalidArgument(format!("unknown domain {token:?}"))),
        many => Err(Error::InvalidArgument(format!(
            "ambiguous domain {token:?}: matches {}",
            many.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Parses one `A-B` pair. Domain names may themselves contain `-`; the
/// split that resolves on both sides wins.
pub fn parse_pair(token: &str, domains: &BTreeSet<DomainId>) -> Result<DomainPair> {
    let mut found = Vec::new();
    for (i, _) in token.match_indices('-') {
        if let (Ok(a), Ok(b)) = (
            resolve_domain(&token[..i], domains),
            resolve_domain(&token[i + 1..], domains),
        ) {
            found.push(DomainPair::new(a, b));
        }
    }
    found.dedup();
    match found.len() {
        1 => Ok(found.pop().unwrap()),
        0 => Err(Error::InvalidArgument(format!("cannot resolve pair {token:?}"))),
        _ => Err(Error::InvalidArgument(format!("pair {token:?} is ambiguous"))),
    }
}

/// Expands a pair selection: `all`, `domainnet`, `office-home`, or a
/// comma-separated `A-B` list (kept in the given order).
pub fn resolve_pairs(
    selection: &str,
    domains: &BTreeSet<DomainId>,
    allow_same_domain: bool,
) -> Result<Vec<DomainPair>> {
    let sel = selection.trim();
    let pairs = match sel.to_lowercase().as_str() {
        "all" | "all-ordered" => all_ordered_pairs(domains),
        "domainnet" => DOMAINNET_PAIRS
            .iter()
            .map(|p| parse_pair(p, domains))
            .collect::<Result<_>>()?,
        "office-home" | "officehome" => OFFICE_HOME_PAIRS
            .iter()
            .map(|p| parse_pair(p, domains))
            .collect::<Result<_>>()?,
        _ => sel
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| parse_pair(p.trim(), domains))
            .collect::<Result<_>>()?,
    };
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "pair selection {selection:?} yields no pairs"
        )));
    }
    if !allow_same_domain {
        if let Some(p) = pairs.iter().find(|p| p.is_same_domain()) {
            return Err(Error::InvalidArgument(format!(
                "pair {p} is same-domain; enable same-domain evaluation to allow it"
            )));
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(names: &[&str]) -> BTreeSet<DomainId> {
        names.iter().map(|n| DomainId::new(n).unwrap()).collect()
    }

    #[test]
    fn all_ordered_counts() {
        for n in [1usize, 2, 3, 4, 6] {
            let names: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            assert_eq!(all_ordered_pairs(&set(&refs)).len(), n * (n - 1));
        }
    }

    #[test]
    fn office_home_all_matches_customary_order() {
        let oh = set(&["Art", "Clipart", "Product", "Real World"]);
        let all = resolve_pairs("all", &oh, false).unwrap();
        let preset = resolve_pairs("office-home", &oh, false).unwrap();
        assert_eq!(all, preset);
        assert_eq!(all[2].label(), "art-real world");
    }

    #[test]
    fn domainnet_preset() {
        let dn = set(&["clipart", "infograph", "painting", "quickdraw", "real", "sketch"]);
        let pairs = resolve_pairs("domainnet", &dn, false).unwrap();
        let labels: Vec<_> = pairs.iter().map(|p| p.label()).collect();
        assert_eq!(labels[0], "clipart-sketch");
        assert_eq!(labels[11], "real-quickdraw");
        assert_eq!(pairs.len(), 12);
        assert_eq!(resolve_pairs("C-S", &dn, false).unwrap(), pairs[..1]);
    }

    #[test]
    fn explicit_pairs_and_errors() {
        let ds = set(&["d0", "d1", "real-world"]);
        let p = resolve_pairs("d1-d0,d0-real-world", &ds, false).unwrap();
        assert_eq!(p[0].label(), "d1-d0");
        assert_eq!(p[1].target_domain.as_str(), "real-world");
        assert!(resolve_pairs("d0-d0", &ds, false).is_err());
        assert!(resolve_pairs("d0-d0", &ds, true).is_ok());
        assert!(resolve_pairs("d0-x9", &ds, false).is_err());
        // "d" prefixes two domains
        assert!(resolve_domain("d", &ds).is_err());
        assert!(resolve_pairs("all", &set(&["only"]), false).is_err());
    }
}
