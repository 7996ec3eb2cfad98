#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mgrade/rng.hpp"
#include "mgrade/serialize.hpp"

using namespace mgrade;

namespace {

std::string temp_path(const char* name) {
  return std::string("mgrade_test_") + name;
}

}  // namespace

TEST_CASE("tensor round trip preserves shape and payload") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Shape shape;
    const std::size_t rank = 1 + rng.uniform_index(3);
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(1 + rng.uniform_index(6));
    const Tensor32 t = rng.uniform_tensor<float>(-2.0f, 2.0f, shape);
    std::stringstream ss;
    write_tensor(ss, t);
    const Tensor32 back = read_tensor<float>(ss);
    CHECK(back.shape() == t.shape());
    CHECK(max_abs_diff(back, t) == 0.0f);
  }
}

TEST_CASE("tensor header layout is bit-exact") {
  const Tensor64 t({2, 1}, {1.0, -1.0});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string raw = ss.str();
  REQUIRE(raw.size() == 4 + 1 + 1 + 16 + 16);
  CHECK(raw.substr(0, 4) == "MGT1");
  CHECK(raw[4] == 1);  // f64 tag
  CHECK(raw[5] == 2);  // rank
  CHECK(static_cast<unsigned char>(raw[6]) == 2);  // first extent, little-endian
  CHECK(static_cast<unsigned char>(raw[14]) == 1);
}

TEST_CASE("precision tag mismatches are rejected") {
  const Tensor32 t({2}, {1.0f, 2.0f});
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK_THROWS_AS(read_tensor<double>(ss), DataError);
}

TEST_CASE("truncated stream is a data error") {
  const Tensor32 t({8});
  std::stringstream ss;
  write_tensor(ss, t);
  std::string raw = ss.str();
  raw.resize(raw.size() - 3);
  std::stringstream cut(raw);
  CHECK_THROWS_AS(read_tensor<float>(cut), DataError);
}

TEST_CASE("archive round trip with digest verification") {
  Rng rng(9);
  Archive<float> ar;
  ar.config = {{"kind", "test"}};
  ar.meta = {{"epoch", 3}};
  ar.tensors.emplace("a", rng.uniform_tensor<float>(-1.0f, 1.0f, {4, 3}));
  ar.tensors.emplace("b", rng.uniform_tensor<float>(-1.0f, 1.0f, {7}));
  const std::string path = temp_path("archive.mgc");
  save_archive(path, ar);
  const Archive<float> back = load_archive<float>(path);
  CHECK(back.config.at("kind") == "test");
  CHECK(back.meta.at("epoch") == 3);
  CHECK(max_abs_diff(back.tensors.at("a"), ar.tensors.at("a")) == 0.0f);
  CHECK(max_abs_diff(back.tensors.at("b"), ar.tensors.at("b")) == 0.0f);
  std::remove(path.c_str());
}

TEST_CASE("corrupted archive payload fails the digest check") {
  Archive<float> ar;
  ar.config = nlohmann::json::object();
  ar.tensors.emplace("w", Tensor32::full({16}, 1.0f));
  const std::string path = temp_path("corrupt.mgc");
  save_archive(path, ar);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-2, std::ios::end);
    f.put('\x7f');
  }
  CHECK_THROWS_WITH_AS(load_archive<float>(path), doctest::Contains("digest mismatch"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("identical archives serialize to identical bytes") {
  Rng rng(13);
  Archive<float> ar;
  ar.config = {{"seed", 13}};
  ar.tensors.emplace("t", rng.uniform_tensor<float>(0.0f, 1.0f, {32}));
  const std::string p1 = temp_path("rep1.mgc");
  const std::string p2 = temp_path("rep2.mgc");
  save_archive(p1, ar);
  save_archive(p2, ar);
  CHECK(file_digest(p1) == file_digest(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}
