fn main() {
    std::process::exit(sata_core::cli::run(std::env::args_os()));
}
