fn main() {
    std::process::exit(meshrecon::cli::run(std::env::args_os()));
}
