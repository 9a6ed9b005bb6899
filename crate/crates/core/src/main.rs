fn main() {
    spaceflow::cli::main()
}
