fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VRVQ_LOG", "info")).init();
    std::process::exit(vrvq::cli::run(std::env::args_os()));
}
