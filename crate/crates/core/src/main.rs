fn main() {
    std::process::exit(kpeval::cli::main());
}
