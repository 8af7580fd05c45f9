//! A run from a flat TOML document: writes a run directory, then replays the
//! configuration stored in its manifest and checks the metrics agree.

use fedlora::experiments::{config_from_manifest, execute_run, RunConfig, MANIFEST_FILE};

const CONFIG: &str = r#"
algorithm = "pf2lora"
interval = 10
total_steps = 60
seed = 5
rank = 4
client_rank = 2
"#;

pub fn run_example() -> fedlora::Result<()> {
    let cfg = RunConfig::parse(CONFIG)?;
    let root = std::env::temp_dir().join(format!("fedlora-example-{}", std::process::id()));
    let first = execute_run("fed", &cfg, root.join("first"), None)?;
    let replay = config_from_manifest(first.out_dir.join(MANIFEST_FILE))?;
    let second = execute_run("fed", &replay, root.join("replay"), Some(1))?;
    let same = std::fs::read(&first.metrics_path).ok() == std::fs::read(&second.metrics_path).ok();
    println!("{} rounds written to {}; replay identical: {same}", first.rounds, first.out_dir.display());
    let _ = std::fs::remove_dir_all(&root);
    Ok(())
}

fn main() -> fedlora::Result<()> {
    run_example()
}
