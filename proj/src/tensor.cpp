#include "attriprompt/tensor.hpp"

#include <sstream>

namespace attriprompt {

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw shape_error("tensor dimensions must be positive, got " + shape_to_string(shape));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad) {
    const std::size_t n = shape_product(shape);
    data_ = std::make_shared<Data>();
    data_->shape = std::move(shape);
    data_->values.assign(n, fill);
    data_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    const std::size_t n = shape_product(shape);
    if (values.size() != n) {
        throw shape_error("value count " + std::to_string(values.size()) +
                          " does not match shape " + shape_to_string(shape));
    }
    data_ = std::make_shared<Data>();
    data_->shape = std::move(shape);
    data_->values = std::move(values);
    data_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor({1}, std::vector<double>{v}, requires_grad);
}

Tensor::Data& Tensor::data() {
    if (!data_) throw contract_error("use of an undefined tensor");
    return *data_;
}

const Tensor::Data& Tensor::data() const {
    if (!data_) throw contract_error("use of an undefined tensor");
    return *data_;
}

int Tensor::rows() const {
    if (rank() != 2) throw shape_error("rows(): tensor is not 2-D, shape " + shape_string());
    return data().shape[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw shape_error("cols(): tensor is not 2-D, shape " + shape_string());
    return data().shape[1];
}

double Tensor::at(int i) const { return data().values.at(static_cast<std::size_t>(i)); }

double Tensor::at(int i, int j) const {
    return data().values.at(static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()) +
                            static_cast<std::size_t>(j));
}

void Tensor::set(int i, double v) { data().values.at(static_cast<std::size_t>(i)) = v; }

void Tensor::set(int i, int j, double v) {
    data().values.at(static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()) +
                     static_cast<std::size_t>(j)) = v;
}

double Tensor::scalar_value() const {
    if (size() != 1) {
        throw contract_error("scalar_value(): tensor has " + std::to_string(size()) + " entries");
    }
    return data().values[0];
}

void Tensor::set_requires_grad(bool v) { data().requires_grad = v; }

std::vector<double>& Tensor::grad() {
    Data& d = data();
    if (!d.grad_present) throw contract_error("gradient requested but absent");
    return d.grad;
}

const std::vector<double>& Tensor::grad() const {
    const Data& d = data();
    if (!d.grad_present) throw contract_error("gradient requested but absent");
    return d.grad;
}

void Tensor::ensure_grad() {
    Data& d = data();
    if (!d.grad_present) {
        d.grad.assign(d.values.size(), 0.0);
        d.grad_present = true;
    }
}

void Tensor::zero_grad() {
    Data& d = data();
    if (d.grad_present) {
        d.grad.assign(d.values.size(), 0.0);
    }
}

void Tensor::drop_grad() {
    Data& d = data();
    d.grad.clear();
    d.grad.shrink_to_fit();
    d.grad_present = false;
}

Tensor Tensor::detached() const {
    const Data& d = data();
    return Tensor(d.shape, d.values, false);
}

std::string Tensor::shape_string() const { return shape_to_string(data().shape); }

void Tape::backward(Tensor loss) {
    if (consumed_) {
        throw contract_error("stale tape: backward was already replayed; reset() before reuse");
    }
    if (loss.size() != 1) {
        throw contract_error("backward requires a scalar loss, got shape " + loss.shape_string());
    }
    consumed_ = true;
    if (loss.requires_grad()) {
        loss.ensure_grad();
        loss.grad()[0] += 1.0;
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        (*it)();
    }
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

}  // namespace attriprompt
