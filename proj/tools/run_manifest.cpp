#include "run_manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sodar::cli {

namespace fs = std::filesystem;

namespace {

std::array<unsigned char, 20> sha1(std::string_view data) {
  std::array<unsigned char, 20> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha1(), nullptr) != 1 || len != out.size()) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  return out;
}

std::string hex(const std::array<unsigned char, 20>& d) {
  std::ostringstream os;
  for (unsigned char c : d) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
  return os.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::array<unsigned char, 20> object_id(std::string_view kind, std::string_view body) {
  std::string obj(kind);
  obj += ' ';
  obj += std::to_string(body.size());
  obj += '\0';
  obj += body;
  return sha1(obj);
}

std::array<unsigned char, 20> tree_id(const fs::path& dir) {
  struct Entry {
    std::string name, sort_key;
    bool is_dir;
    std::array<unsigned char, 20> id;
  };
  std::vector<Entry> entries;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name == kManifestName) continue;
    if (e.is_directory()) {
      entries.push_back({name, name + "/", true, tree_id(e.path())});
    } else if (e.is_regular_file()) {
      entries.push_back({name, name, false, object_id("blob", read_file(e.path()))});
    }
  }
  std::ranges::sort(entries, {}, &Entry::sort_key);
  std::string body;
  for (const auto& e : entries) {
    body += e.is_dir ? "40000 " : "100644 ";
    body += e.name;
    body += '\0';
    body.append(reinterpret_cast<const char*>(e.id.data()), e.id.size());
  }
  return object_id("tree", body);
}

}  // namespace

std::string git_blob_hash(std::string_view content) { return hex(object_id("blob", content)); }

std::string git_hash_path(const fs::path& path) {
  if (fs::is_directory(path)) return hex(tree_id(path));
  if (fs::is_regular_file(path)) return git_blob_hash(read_file(path));
  throw std::runtime_error("cannot hash " + path.string() + ": not found");
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["argv"] = argv;
  j["config"] = config;
  j["seed"] = seed;
  nlohmann::json ins = nlohmann::json::array();
  std::string combined;
  for (const auto& [name, path] : inputs) {
    const std::string h = git_hash_path(path);
    ins.push_back({{"name", name}, {"path", path.string()}, {"hash", h}});
    combined += name + ' ' + h + '\n';
  }
  j["inputs"] = ins;
  j["inputs_hash"] = git_blob_hash(combined);
  j["outputs"] = outputs;
  j["wall_seconds"] = wall_seconds;
  return j;
}

void RunManifest::write(const fs::path& dir) const {
  std::ofstream os(dir / kManifestName);
  if (!os) throw std::runtime_error("cannot write " + (dir / kManifestName).string());
  os << to_json().dump(2) << '\n';
}

void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError("output path " + dir.string() + " is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw UsageError("output directory " + dir.string() + " is not empty (use --force to replace it)");
      for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
    }
  }
  fs::create_directories(dir);
}

}  // namespace sodar::cli
