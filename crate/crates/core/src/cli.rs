//! Implementation of the `poshap` binary.

/// Parses `args` (excluding the program name) and runs the selected
/// command, returning the process exit code.
pub fn run<I, S>(_args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    eprintln!("error: not yet wired");
    2
}
