use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("JOINSS_LOG")).init();
    let argv: Vec<String> = std::env::args().collect();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let code = joinss::cli::run_command(&argv, &mut lock);
    let _ = lock.flush();
    std::process::exit(code);
}
