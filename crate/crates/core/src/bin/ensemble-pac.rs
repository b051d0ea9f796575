fn main() {
    std::process::exit(ensemble_pac::cli::run(std::env::args_os()));
}
