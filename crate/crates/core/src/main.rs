fn main() {
    std::process::exit(depca_lab::cli::main());
}
