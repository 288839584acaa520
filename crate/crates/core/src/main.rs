fn main() {
    std::process::exit(drgt_core::cli::main());
}
