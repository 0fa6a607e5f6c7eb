pub mod condense;
pub mod estimate_dim;
pub mod simulate;
pub mod spectrum;

use std::path::PathBuf;

/// Global invocation context shared by every subcommand.
pub struct Context {
    pub out_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub dry_run: bool,
}

impl Context {
    /// Prints the resolved plan for `--dry-run`.
    pub fn print_plan<T: serde::Serialize>(&self, command: &str, params: &T, outputs: &[&str]) {
        let plan = serde_json::json!({
            "command": command,
            "params": params,
            "out_dir": self.out_dir.display().to_string(),
            "outputs": outputs,
        });
        println!("{}", serde_json::to_string_pretty(&plan).expect("plan serialization"));
    }
}
