fn main() {
    std::process::exit(dedge_agm::cli::main());
}
