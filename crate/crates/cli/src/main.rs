fn main() {
    env_logger::init();
    std::process::exit(tpgmm_cli::run(std::env::args_os()));
}
