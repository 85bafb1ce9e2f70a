use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;

fn main() {
    let args: Vec<_> = std::env::args_os().collect();
    let verbosity = zsl_kep_cli::Cli::try_parse_from(&args).map_or(0, |c| c.verbose);
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    // First interrupt stops scheduling new claims; finished reports are still
    // written. A second interrupt exits immediately.
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    if let Err(e) = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(zsl_kep_cli::EXIT_INTERRUPTED);
        }
        eprintln!("interrupt received: finishing claims in progress");
    }) {
        log::warn!("cannot install interrupt handler: {e}");
    }

    let code = zsl_kep_cli::run_cli(args, &mut std::io::stdout(), &mut std::io::stderr(), &cancel);
    std::process::exit(code);
}
