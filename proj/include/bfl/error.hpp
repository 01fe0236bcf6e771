#pragma once

#include <stdexcept>
#include <string>

namespace bfl {

// Base for everything the library throws on a violated contract.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

class parameter_error : public error {
public:
    using error::error;
    const char* kind() const noexcept override { return "parameter_error"; }
};

// Zero distances between a point of interest and a microphone.
class geometry_error : public error {
public:
    using error::error;
    const char* kind() const noexcept override { return "geometry_error"; }
};

class numerical_error : public error {
public:
    using error::error;
    const char* kind() const noexcept override { return "numerical_error"; }
};

class format_error : public error {
public:
    format_error(const std::string& what, std::string path = {})
        : error(path.empty() ? what : what + ": " + path), path_(std::move(path)) {}
    const char* kind() const noexcept override { return "format_error"; }
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

} // namespace bfl
