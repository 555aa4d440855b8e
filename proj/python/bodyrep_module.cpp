#include <pybind11/pybind11.h>
PYBIND11_MODULE(_bodyrep, m) { m.doc() = "bodyrep"; }
