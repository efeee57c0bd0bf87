use chlorolab_cli::{execute, Cli};
use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("CHLOROLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("cannot cap threads: {e}");
        }
    }
    let (code, summary) = execute(&cli);
    if let Some(msg) = summary.get("error").and_then(|v| v.as_str()) {
        log::error!("{msg}");
    }
    println!("{summary}");
    std::process::exit(code);
}
