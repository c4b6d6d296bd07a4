//! The encrypted file-service daemon.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use efs::daemon::{Daemon, DaemonConfig};
use efs::server::{self, Server};

#[derive(Parser, Debug)]
#[command(name = "efsd", version, about = "Serve encrypted directories over a local socket")]
struct Args {
    /// Socket path (default: $EFS_ENDPOINT or /tmp/efsd.sock)
    #[arg(long)]
    endpoint: Option<PathBuf>,
    /// Open-file cache capacity (default: $EFS_CACHE_CAP or 16)
    #[arg(long)]
    cache_cap: Option<usize>,
    /// Mask period in 16-byte blocks (default: $EFS_MASK_BLOCKS or 4096)
    #[arg(long)]
    mask_blocks: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut config = match DaemonConfig::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("efsd: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = args.cache_cap {
        config.cache_capacity = n;
    }
    if let Some(m) = args.mask_blocks {
        if m == 0 {
            eprintln!("efsd: --mask-blocks must be at least 1");
            return ExitCode::from(1);
        }
        config.mask_blocks = m;
    }
    let endpoint = args.endpoint.unwrap_or_else(server::endpoint_from_env);
    let server = match Server::bind(&endpoint) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("efsd: cannot listen on {}: {e}", endpoint.display());
            return ExitCode::from(2);
        }
    };
    log::info!("listening on {}", server.path().display());
    match server.serve(Arc::new(Daemon::new(config))) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("efsd: {e}");
            ExitCode::from(2)
        }
    }
}
