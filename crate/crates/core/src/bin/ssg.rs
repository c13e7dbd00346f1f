fn main() -> std::process::ExitCode {
    ssg::cli::main()
}
