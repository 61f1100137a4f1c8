fn main() {
    std::process::exit(relaxctl_lab::dispatch(std::env::args_os()));
}
