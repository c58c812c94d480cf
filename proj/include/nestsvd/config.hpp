#pragma once

// Experiment configuration: JSON in, fully materialized JSON out. Every key is
// validated, unknown keys are rejected, and all defaults are written back so a
// resolved config reproduces its run on its own.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include "json.hpp"

#include "nestsvd/errors.hpp"
#include "nestsvd/linalg.hpp"

namespace nestsvd {

using Json = nlohmann::ordered_json;

/// A validation failure at a JSON pointer ("/train/batch_size"); the empty
/// pointer names the document root.
class ConfigError : public InputError {
public:
    ConfigError(std::string pointer, const std::string& message)
        : InputError(pointer.empty() ? message : pointer + ": " + message), pointer_(std::move(pointer)) {}
    const std::string& pointer() const { return pointer_; }

private:
    std::string pointer_;
};

/// 1-based line and column of the value at `pointer` in `text`, falling back to
/// the nearest enclosing value when the pointer names a missing key.
std::optional<std::pair<int, int>> locate_json_pointer(const std::string& text, const std::string& pointer);

/// Parses config text; syntax errors come back as InputError prefixed "source:line:col: ".
Json parse_config_text(const std::string& text, const std::string& source_name);

/// Validates `raw` and materializes every default. Relative data-file paths are
/// resolved against `base_dir`; the loaded data is inlined into the result.
Json resolve_config(const Json& raw, const std::filesystem::path& base_dir = {});

/// Reads, parses and resolves a config file with line-precise error messages.
Json load_config(const std::filesystem::path& path);

}  // namespace nestsvd
