fn main() {
    std::process::exit(trajdistill::toolkit::cli::run(std::env::args_os()));
}
