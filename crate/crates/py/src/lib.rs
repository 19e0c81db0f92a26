use pyo3::prelude::*;

#[pymodule]
fn poshap_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
