#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using namespace sodar::cli;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sodar_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("blob hashes match git hash-object") {
    CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  }

  TEST_CASE("directory hash matches git write-tree") {
    const auto d = scratch("tree");
    put(d / "a.txt", "hello\n");
    put(d / "empty", "");
    put(d / "sub" / "b.bin", "x");
    CHECK(git_hash_path(d) == "0307ea69efb34dfb8f4fb20c110b64c1bef47d8f");
    CHECK(git_hash_path(d / "a.txt") == "ce013625030ba8dba906f756967f9e9ca394464a");

    put(d / kManifestName, "{}");
    CHECK(git_hash_path(d) == "0307ea69efb34dfb8f4fb20c110b64c1bef47d8f");
    put(d / "sub" / "b.bin", "y");
    CHECK(git_hash_path(d) != "0307ea69efb34dfb8f4fb20c110b64c1bef47d8f");
    CHECK_THROWS(git_hash_path(d / "missing"));
  }

  TEST_CASE("prepare_output refuses a non-empty directory") {
    const auto d = scratch("out");
    CHECK_NOTHROW(prepare_output(d, false));
    put(d / "f.txt", "1");
    CHECK_THROWS_AS(prepare_output(d, false), UsageError);
    CHECK(fs::exists(d / "f.txt"));
    prepare_output(d, true);
    CHECK(fs::is_empty(d));
    prepare_output(d / "new", false);
    CHECK(fs::is_directory(d / "new"));
    put(d / "file", "1");
    CHECK_THROWS_AS(prepare_output(d / "file", true), UsageError);
  }

  TEST_CASE("manifest records inputs and a combined hash") {
    const auto d = scratch("manifest");
    put(d / "in.txt", "hello\n");
    RunManifest m;
    m.command = "train";
    m.argv = {"sodar", "train"};
    m.config = "epochs=1\n";
    m.seed = 9;
    m.inputs = {{"data", d / "in.txt"}};
    m.outputs = {"curve.csv"};
    m.wall_seconds = 1.5;
    m.write(d);
    std::ifstream is(d / kManifestName);
    const auto j = nlohmann::json::parse(is);
    CHECK(j["command"] == "train");
    CHECK(j["seed"] == 9);
    CHECK(j["inputs"][0]["hash"] == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(j["inputs_hash"] == git_blob_hash("data ce013625030ba8dba906f756967f9e9ca394464a\n"));
    CHECK(j["outputs"][0] == "curve.csv");
    CHECK(j["wall_seconds"] == 1.5);
  }
}
