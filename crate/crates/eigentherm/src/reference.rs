//! Published large-lattice values (16 and 18 sites). They are far beyond
//! the dense solver on a workstation and serve as targets for
//! `configs/full-scale.toml`, not as test oracles.

/// A reported value with its uncertainty (`0.0` when none was given).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub name: &'static str,
    pub sites: usize,
    pub value: f64,
    pub uncertainty: f64,
}

const fn r(name: &'static str, sites: usize, value: f64, uncertainty: f64) -> Reference {
    Reference { name, sites, value, uncertainty }
}

/// Overlap-peak fit at `t = 6.25e-4`, averaged over 3200 states near
/// `λ = -0.95789`.
pub const PEAK_T: f64 = 6.25e-4;
pub const PEAK_LAMBDA: f64 = -0.95789;
pub const PEAK_N_AV: usize = 3200;

pub const VALUES: &[Reference] = &[
    r("gamma_1", 18, 1.804e-3, 0.0),
    r("gamma_2", 18, 2.013e-3, 0.0),
    r("eta_1", 18, 1.013e-3, 0.0),
    r("eta_2", 18, -0.565e-3, 0.0),
    r("bath_sd", 16, 1.0438, 0.0033),
    r("delta_d", 18, 2.1099, 0.0035),
    r("delta_0", 16, 0.6131, 0.0024),
    r("offdiag_log_slope", 18, -0.543, 0.0),
    r("tau_decay_constant", 18, 591.06, 0.0),
];

pub fn get(name: &str) -> Option<Reference> {
    VALUES.iter().copied().find(|v| v.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn full_scale_config_targets_the_reference_window() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/full-scale.toml");
        let cfg = parse_config(std::path::Path::new(path)).unwrap();
        assert!(cfg.params.t.contains(&PEAK_T));
        assert!(cfg.ensemble.targets.contains(&PEAK_LAMBDA));
        assert_eq!(cfg.ensemble.n_av, Some(PEAK_N_AV));
        assert_eq!(cfg.lattice.sites, get("bath_sd").unwrap().sites);
        assert!(get("gamma_2").unwrap().value > get("gamma_1").unwrap().value);
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "toml") {
                parse_config(&p).unwrap_or_else(|err| panic!("{}: {err}", p.display()));
            }
        }
    }
}
