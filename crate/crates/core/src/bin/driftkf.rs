fn main() {
    std::process::exit(driftkf::cli::main());
}
