fn main() {
    std::process::exit(facemem::cli::run(std::env::args_os()));
}
