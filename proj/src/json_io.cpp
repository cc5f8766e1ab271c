#include "perfact/json_io.hpp"

#include <fstream>

namespace perfact::json_io {

ordered_json load_document(const std::string& path, const std::string& expected_format,
                           int expected_version) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != expected_format) {
            throw FormatError(path + ": expected format '" + expected_format + "', found '" +
                              j.at("format").get<std::string>() + "'");
        }
        if (j.at("version").get<int>() != expected_version) {
            throw VersionMismatch(path + ": unsupported " + expected_format + " version " +
                                  j.at("version").dump());
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    return j;
}

void save_document(const ordered_json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << j.dump(2) << "\n";
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

}  // namespace perfact::json_io
