#ifndef MPK_ERROR_HPP
#define MPK_ERROR_HPP

#include <stdexcept>
#include <string>

namespace mpk {

/// Base class of every error raised by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor dimensions disagree with each other or with a declared shape.
class shape_error : public error {
public:
    explicit shape_error(const std::string& what) : error("shape error: " + what) {}
};

/// Corrupt or unreadable file contents.
class format_error : public error {
public:
    explicit format_error(const std::string& what) : error("format error: " + what) {}
};

/// A hyperparameter is outside its valid range.
class parameter_error : public error {
public:
    explicit parameter_error(const std::string& what) : error("parameter error: " + what) {}
};

/// Input data cannot support the requested computation.
class data_error : public error {
public:
    explicit data_error(const std::string& what) : error("data error: " + what) {}
};

/// A computation produced NaN or Inf.
class numeric_error : public error {
public:
    explicit numeric_error(const std::string& what) : error("numeric error: " + what) {}
};

class argument_error : public error {
public:
    explicit argument_error(const std::string& what) : error("argument error: " + what) {}
};

/// The model configuration does not support the operation (e.g. phase features with L != 2).
class unsupported_error : public error {
public:
    explicit unsupported_error(const std::string& what) : error("unsupported configuration: " + what) {}
};

class config_error : public error {
public:
    explicit config_error(const std::string& what) : error("config error: " + what) {}
};

} // namespace mpk

#endif
