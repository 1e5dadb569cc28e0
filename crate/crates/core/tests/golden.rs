//! Outputs of seeded, untrained networks against stored references.
//! Set `STEADYOP_BLESS=1` to rewrite the references.

use std::path::PathBuf;

use steadyop_core::fno::{ArchConfig, ArchKind, DeqSettings, Model};
use steadyop_core::format::{load_tensor, save_tensor};
use steadyop_core::spectral::{grf_sample, GrfParams, SpectralGrid};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn seeded_untrained_outputs_match_references() {
    let f = grf_sample(42, &SpectralGrid::torus(16).unwrap(), &GrfParams::default()).unwrap();
    let bless = std::env::var_os("STEADYOP_BLESS").is_some();
    for kind in [ArchKind::Fno, ArchKind::FnoPlusPlus, ArchKind::FnoWt, ArchKind::FnoDeq] {
        let mut cfg = ArchConfig::new(kind, 1, 1, 6, 4);
        cfg.unroll = 3;
        cfg.grid = true;
        let model = Model::init(cfg, 7).unwrap();
        let out = model.forward(&f, &DeqSettings::default()).unwrap().output;
        let path = golden(&format!("{kind}.fnt"));
        if bless {
            save_tensor(&path, &out).unwrap();
            continue;
        }
        let want = load_tensor(&path).unwrap();
        assert_eq!(want.shape(), out.shape());
        let diff = out.sub(&want).unwrap().max_abs();
        assert!(diff <= 1e-12 * want.max_abs().max(1.0), "{kind}: {diff:e}");
    }
}
