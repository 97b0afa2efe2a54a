fn main() {
    std::process::exit(grnp::cli::main())
}
