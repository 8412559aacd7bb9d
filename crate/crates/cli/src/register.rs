use std::path::Path;

use ogmm_core::data::{read_cloud, CloudFormat};
use ogmm_core::{register, RegistrationConfig, RegistrationResult};

use crate::error::{CliError, CliResult};

fn load(path: &Path) -> CliResult<ogmm_core::PointCloud> {
    let format = CloudFormat::from_path(path)?;
    read_cloud(path, format).map_err(|e| match e {
        ogmm_core::Error::Io(io) => CliError::new("io", format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

/// Registers two cloud files and writes the result JSON to `out`, or
/// returns it when `out` is `None`.
pub fn cmd_register(
    source: &Path,
    target: &Path,
    cfg: &RegistrationConfig,
    out: Option<&Path>,
) -> CliResult<RegistrationResult> {
    let src = load(source)?;
    let tgt = load(target)?;
    let result = register(&src, &tgt, cfg, None)?;
    if let Some(out) = out {
        std::fs::write(out, result.to_json()?)?;
    }
    Ok(result)
}
