#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "attriprompt/errors.hpp"

namespace attriprompt {

// Dense 64-bit float tensor with an optional gradient buffer. Tensor is a
// shared handle: copies refer to the same storage, which is what lets tape
// closures accumulate gradients into the buffers the caller holds. Values
// are row-major; there is no view aliasing, slicing ops copy.
class Tensor {
  public:
    Tensor() = default;

    Tensor(std::vector<int> shape, double fill, bool requires_grad = false);
    Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return data_ != nullptr; }

    const std::vector<int>& shape() const { return data().shape; }
    int rank() const { return static_cast<int>(data().shape.size()); }
    int dim(int axis) const { return data().shape.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const { return data().values.size(); }

    // 2-D conveniences; throw shape_error when the rank does not match.
    int rows() const;
    int cols() const;

    std::vector<double>& values() { return data().values; }
    const std::vector<double>& values() const { return data().values; }

    double at(int i) const;
    double at(int i, int j) const;
    void set(int i, double v);
    void set(int i, int j, double v);

    // The single value of a size-1 tensor.
    double scalar_value() const;

    bool requires_grad() const { return data().requires_grad; }
    void set_requires_grad(bool v);

    // Gradient buffer handling. The buffer stays absent until the tensor
    // participates in a recorded operation (or ensure_grad is called).
    bool grad_present() const { return data().grad_present; }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void ensure_grad();
    void zero_grad();
    void drop_grad();

    // Deep copy with no gradient state and requires_grad=false.
    Tensor detached() const;

    bool same_storage(const Tensor& other) const { return data_ == other.data_; }

    std::string shape_string() const;

  private:
    struct Data {
        std::vector<int> shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool requires_grad = false;
        bool grad_present = false;
    };

    Data& data();
    const Data& data() const;

    std::shared_ptr<Data> data_;
};

std::size_t shape_product(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

// Reverse-mode tape. Operations append one closure each in execution order;
// backward replays them in reverse. A tape may be replayed once per forward
// pass; reset() clears it for the next one.
class Tape {
  public:
    void push(std::function<void()> backward_step) { nodes_.push_back(std::move(backward_step)); }

    // Seeds d(loss)/d(loss)=1 and runs every recorded reverse rule. Throws
    // contract_error for a non-scalar loss and for a second replay without a
    // reset in between.
    void backward(Tensor loss);

    void reset();

    std::size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

  private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

}  // namespace attriprompt
