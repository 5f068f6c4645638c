#include "gridbayes/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gridbayes/error.hpp"

namespace gridbayes {

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {
  if (dims_.size() > kMaxRank) {
    throw ConfigError("tensor rank " + std::to_string(dims_.size()) +
                      " exceeds 4");
  }
}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() > kMaxRank) {
    throw ConfigError("tensor rank " + std::to_string(dims_.size()) +
                      " exceeds 4");
  }
}

std::size_t Shape::element_count() const {
  if (dims_.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t d : dims_) n *= d;
  return n;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), values_(shape_.element_count(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (values_.size() != shape_.element_count()) {
    throw ConfigError("tensor of shape " + shape_.to_string() + " given " +
                      std::to_string(values_.size()) + " values");
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(values_.begin(), values_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace gridbayes
