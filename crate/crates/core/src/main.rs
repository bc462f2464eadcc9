fn main() {
    std::process::exit(fusion_core::cli::run(std::env::args_os()));
}
