#pragma once

#include <cstddef>
#include <vector>

namespace jlcm {

// Dense row-major matrix.
template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool operator==(const Matrix& other) const = default;
};

using Matf = Matrix<float>;
using Matd = Matrix<double>;

inline Matd widen(const Matf& m) {
    Matd out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = double(m.data[i]);
    return out;
}

inline Matf narrow(const Matd& m) {
    Matf out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = float(m.data[i]);
    return out;
}

} // namespace jlcm
