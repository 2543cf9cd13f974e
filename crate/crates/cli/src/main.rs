fn main() {
    std::process::exit(periodic_adjoint_cli::run(std::env::args_os()));
}
