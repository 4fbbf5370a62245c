pub mod calibrate;
pub mod compare;
pub mod report;
pub mod simulate;
pub mod train;

use std::path::{Path, PathBuf};

use pedcross::Checkpoint;

use crate::error::{require_file, CliResult};
use crate::settings::default_out;
use crate::Cli;

/// Output directory: `--out`, then the config file, then the default root.
pub(crate) fn out_dir(cli: &Cli, configured: &Option<PathBuf>, command: &str) -> PathBuf {
    cli.out.clone().or_else(|| configured.clone()).unwrap_or_else(|| default_out(command))
}

pub(crate) fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    require_file(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

pub(crate) fn default_checkpoint() -> PathBuf {
    default_out("train").join("policy.ckpt")
}
