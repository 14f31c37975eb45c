fn main() {
    std::process::exit(phasebit::cli::run(std::env::args_os()));
}
