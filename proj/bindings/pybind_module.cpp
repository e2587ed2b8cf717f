#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hoidet/tensor.hpp"

namespace py = pybind11;

// Bindings grow alongside the core library; the matching/eval/inference entry
// points are added where those modules are implemented.

PYBIND11_MODULE(_hoidet, m) {
    m.doc() = "native core for the genhoi toolkit";
    m.def("engine_selfcheck", []() {
        auto a = hoidet::ag::constant({2, 2}, {1.0, 2.0, 3.0, 4.0});
        a->needs_grad = true;
        auto loss = hoidet::ag::sum_all(hoidet::ag::square(a));
        hoidet::ag::backward(loss);
        return hoidet::ag::item(loss);
    });
}
