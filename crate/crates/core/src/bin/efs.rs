fn main() {
    std::process::exit(efs::cli::run(std::env::args_os()));
}
