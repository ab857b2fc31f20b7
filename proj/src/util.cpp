#include "vulnroute/error.hpp"
#include "vulnroute/util/hash.hpp"
#include "vulnroute/util/json_io.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

namespace vulnroute {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::DuplicateType: return "DuplicateType";
    case ErrorKind::EmptyCategory: return "EmptyCategory";
    case ErrorKind::DuplicateCategoryId: return "DuplicateCategoryId";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::NoPositives: return "NoPositives";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::EmbeddingDimensionMismatch: return "EmbeddingDimensionMismatch";
    case ErrorKind::EmptyKnowledgeBase: return "EmptyKnowledgeBase";
    case ErrorKind::UnknownCategory: return "UnknownCategory";
    case ErrorKind::StoreFormat: return "StoreFormat";
    case ErrorKind::ConfigMissing: return "ConfigMissing";
    case ErrorKind::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorKind::DimensionDrift: return "DimensionDrift";
    case ErrorKind::AllCategoriesEmpty: return "AllCategoriesEmpty";
    case ErrorKind::MissingDetectorPrompt: return "MissingDetectorPrompt";
    case ErrorKind::MissingGold: return "MissingGold";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::MalformedRecord, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  write_text_file_atomic(path, doc.dump(2) + "\n");
}

std::string sanitize_filename(std::string_view id) {
  std::string out;
  out.reserve(id.size());
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

}  // namespace vulnroute
