#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <string>
#include <vector>

#include "xcanids/container.hpp"
#include "xcanids/error.hpp"

using namespace xcanids;

namespace {

Container sample() {
    Container c;
    c.kind = ContainerKind::calibration;
    c.meta["alpha"] = "one";
    c.meta["beta"] = "0.125";
    NamedTensor w;
    w.name = "weights";
    w.dtype = TensorDType::f32;
    w.dims = {2, 3};
    w.data = {0.5, -1.25, 2.0, 0.0, 3.5, -0.75};
    c.tensors.push_back(w);
    NamedTensor t;
    t.name = "theta";
    t.dtype = TensorDType::f64;
    t.dims = {3};
    t.data = {1e-9, 0.1234567890123456, 3.0};
    c.tensors.push_back(t);
    return c;
}

std::string blob_of(const Container& c) {
    std::ostringstream os(std::ios::binary);
    write_container(os, c);
    return os.str();
}

}  // namespace

TEST_CASE("containers round trip metadata and tensors", "[container]") {
    Container c = sample();
    std::istringstream is(blob_of(c), std::ios::binary);
    Container back = read_container(is);

    CHECK(back.kind == ContainerKind::calibration);
    CHECK(back.meta == c.meta);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensor_at("weights").dims == std::vector<std::uint64_t>{2, 3});
    // f32 payloads come back at float precision; these values are exact floats
    CHECK(back.tensor_at("weights").data == c.tensors[0].data);
    // f64 payloads come back bit for bit
    CHECK(back.tensor_at("theta").data == c.tensors[1].data);
    CHECK(back.tensor_at("theta").dtype == TensorDType::f64);
}

TEST_CASE("f32 tensors quantize doubles on write", "[container]") {
    Container c;
    NamedTensor t;
    t.name = "q";
    t.dtype = TensorDType::f32;
    t.dims = {1};
    t.data = {0.1234567890123456};
    c.tensors.push_back(t);
    std::istringstream is(blob_of(c), std::ios::binary);
    Container back = read_container(is);
    CHECK(back.tensor_at("q").data[0] ==
          static_cast<double>(static_cast<float>(0.1234567890123456)));
}

TEST_CASE("bad magic and version are rejected", "[container]") {
    std::string blob = blob_of(sample());
    std::string wrong = "YYYY" + blob.substr(4);
    std::istringstream bad(wrong, std::ios::binary);
    CHECK_THROWS_AS(read_container(bad), DataError);

    std::string v2 = blob;
    v2[4] = 9;  // version field
    std::istringstream badver(v2, std::ios::binary);
    CHECK_THROWS_AS(read_container(badver), DataError);

    std::string badkind = blob;
    badkind[8] = 7;  // kind byte after magic and version
    std::istringstream bk(badkind, std::ios::binary);
    CHECK_THROWS_AS(read_container(bk), DataError);
}

TEST_CASE("truncated containers are rejected", "[container]") {
    std::string blob = blob_of(sample());
    for (std::size_t cut : {blob.size() - 1, blob.size() - 9, std::size_t{6}}) {
        std::istringstream is(blob.substr(0, cut), std::ios::binary);
        CHECK_THROWS_AS(read_container(is), DataError);
    }
}

TEST_CASE("missing lookups throw with the key in the message", "[container]") {
    Container c = sample();
    CHECK_THROWS_WITH(c.meta_at("gamma"), Catch::Matchers::ContainsSubstring("gamma"));
    CHECK_THROWS_WITH(c.tensor_at("nope"), Catch::Matchers::ContainsSubstring("nope"));
    CHECK(c.meta_at("alpha") == "one");
    CHECK(c.tensor_at("theta").name == "theta");
}

TEST_CASE("mismatched tensor payload sizes cannot be written", "[container]") {
    Container c;
    NamedTensor t;
    t.name = "short";
    t.dims = {4};
    t.data = {1.0, 2.0};  // two values for four slots
    c.tensors.push_back(t);
    std::ostringstream os(std::ios::binary);
    CHECK_THROWS_AS(write_container(os, c), DataError);
}

TEST_CASE("implausibly large tensors are refused on read", "[container]") {
    Container c;
    NamedTensor t;
    t.name = "big";
    t.dims = {};
    t.data = {42.0};  // scalar: empty dims give size one
    c.tensors.push_back(t);
    std::string blob = blob_of(c);
    // grow the declared shape without supplying data: reader must bail on the
    // size guard or on truncation, never allocate the full claim
    std::size_t pos = blob.find("big") + 3;
    std::string hacked = blob.substr(0, pos + 1);
    hacked += '\x04';  // four dimensions
    for (int i = 0; i < 4; ++i) {
        hacked += '\xff';
        hacked += std::string(7, '\x00');  // 255 each, 255^4 > the guard
    }
    std::istringstream is(hacked, std::ios::binary);
    CHECK_THROWS_AS(read_container(is), DataError);
}
