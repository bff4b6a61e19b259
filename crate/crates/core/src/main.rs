fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CIBR_LOG", "info"))
        .target(env_logger::Target::Stdout)
        .format_timestamp(None)
        .init();
    std::process::exit(cibr::cli::run(std::env::args_os()));
}
