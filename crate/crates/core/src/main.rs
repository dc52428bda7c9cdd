fn main() {
    env_logger::init();
    std::process::exit(frac_hp::cli::run(std::env::args_os()));
}
