fn main() {
    std::process::exit(taskc::cli::main());
}
