#pragma once

#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "madn/common.hpp"

namespace madn {

// Dense 4D shape, NCHW. Lower-rank data uses size-1 leading dims.
struct Shape {
    int n = 1, c = 1, h = 1, w = 1;

    Shape() = default;
    Shape(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {}

    int64_t numel() const { return int64_t(n) * c * h * w; }
    bool operator==(const Shape& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

// Reference-counted dense tensor. Copies share storage; ops allocate fresh
// outputs, so aliasing only ever happens deliberately (parameter leaves).
template <class T>
class TensorT {
   public:
    TensorT() : shape_{0, 0, 0, 0} {}
    explicit TensorT(Shape s, T fill = T(0))
        : shape_(s), data_(std::make_shared<std::vector<T>>(s.numel(), fill)) {}
    TensorT(Shape s, std::vector<T> values) : shape_(s), data_(std::make_shared<std::vector<T>>(std::move(values))) {
        MADN_CHECK(int64_t(data_->size()) == s.numel(), "tensor data size ", data_->size(),
                   " does not match shape ", s.str());
    }

    bool empty() const { return !data_; }
    const Shape& shape() const { return shape_; }
    int64_t numel() const { return shape_.numel(); }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }

    T& at(int n, int c, int y, int x) { return (*data_)[idx(n, c, y, x)]; }
    const T& at(int n, int c, int y, int x) const { return (*data_)[idx(n, c, y, x)]; }

    T& operator[](int64_t i) { return (*data_)[i]; }
    const T& operator[](int64_t i) const { return (*data_)[i]; }

    int64_t idx(int n, int c, int y, int x) const {
        return ((int64_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    TensorT clone() const {
        TensorT out;
        out.shape_ = shape_;
        out.data_ = std::make_shared<std::vector<T>>(*data_);
        return out;
    }

    void fill(T v) { std::fill(data_->begin(), data_->end(), v); }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out(shape_);
        const T* s = data();
        U* d = out.data();
        for (int64_t i = 0; i < numel(); ++i) d[i] = static_cast<U>(s[i]);
        return out;
    }

    bool shares_storage(const TensorT& o) const { return data_ == o.data_; }

   private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;

    template <class U>
    friend class TensorT;
};

using TensorD = TensorT<double>;
using TensorF = TensorT<float>;

}  // namespace madn
