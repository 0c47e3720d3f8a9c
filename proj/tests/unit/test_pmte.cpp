#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "scenescore/encoder.hpp"
#include "scenescore/pmte.hpp"
#include "scenescore/rng.hpp"

using namespace scenescore;

namespace {

Tensor random_tensor(Rng& rng, std::vector<uint32_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.resize(t.element_count());
    for (float& v : t.data) v = static_cast<float>(rng.uniform(-5.0, 5.0));
    return t;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("pmte write-then-read is bit-identical") {
    Rng rng(1);
    std::vector<Tensor> tensors{random_tensor(rng, {3, 4}),
                                random_tensor(rng, {7}),
                                random_tensor(rng, {2, 2, 2})};
    const std::string path = "pmte_tmp.bin";
    write_pmte(path, tensors);
    auto back = read_pmte(path);
    REQUIRE(back.size() == tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        CHECK(back[i].shape == tensors[i].shape);
        REQUIRE(back[i].data.size() == tensors[i].data.size());
        for (std::size_t j = 0; j < tensors[i].data.size(); ++j)
            CHECK(back[i].data[j] == tensors[i].data[j]);
    }
    std::remove(path.c_str());
}

TEST_CASE("pmte integrity failures") {
    Rng rng(2);
    const std::string path = "pmte_tmp2.bin";
    write_pmte(path, {random_tensor(rng, {4, 4})});
    std::string bytes = slurp(path);

    spit(path, bytes.substr(0, bytes.size() - 5));  // truncated
    CHECK_THROWS_AS(read_pmte(path), DataError);

    spit(path, bytes + "xx");  // trailing garbage
    CHECK_THROWS_AS(read_pmte(path), DataError);

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    spit(path, bad_magic);
    CHECK_THROWS_AS(read_pmte(path), DataError);

    std::string bad_version = bytes;
    bad_version[4] = 9;
    spit(path, bad_version);
    CHECK_THROWS_AS(read_pmte(path), DataError);

    std::remove(path.c_str());
    CHECK_THROWS_AS(read_pmte(path), DataError);  // missing file
}

TEST_CASE("external hidden import") {
    Rng rng(3);
    std::vector<std::pair<std::string, ImportedHidden>> items;
    for (int img = 0; img < 2; ++img) {
        ImportedHidden item;
        item.hidden = Mat(4, 8);
        for (double& v : item.hidden.data()) v = rng.uniform(-1.0, 1.0);
        item.tokens = {"[CLS]", "road", "tree", "[SEP]"};
        items.push_back({"img" + std::to_string(img), item});
    }
    const std::string pmte = "hidden_tmp.pmte";
    const std::string index = "hidden_tmp.index.jsonl";
    export_external_hidden(pmte, index, items);

    auto imported = import_external_hidden(pmte, index);
    REQUIRE(imported.size() == 2);
    for (const auto& [id, item] : items) {
        const ImportedHidden& got = imported.at(id);
        CHECK(got.hidden.rows() == 4);
        CHECK(got.hidden.cols() == 8);
        for (std::size_t i = 0; i < item.hidden.data().size(); ++i)
            CHECK(got.hidden.data()[i] ==
                  double(float(item.hidden.data()[i])));  // f32 exact round trip
        auto mask = got.content_mask();
        CHECK(mask == std::vector<uint8_t>{0, 1, 1, 0});
    }

    // truncation: error, no partial result
    std::string bytes = slurp(pmte);
    spit(pmte, bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(import_external_hidden(pmte, index), DataError);

    // index/tensor shape mismatch
    spit(pmte, bytes);
    std::string idx = slurp(index);
    std::string broken = idx;
    auto pos = broken.find("\"token_strings\":[\"[CLS]\"");
    REQUIRE(pos != std::string::npos);
    broken.replace(pos, 24, "\"token_strings\":[\"[XXX]\",\"[CLS]\"");
    spit(index, broken);
    CHECK_THROWS_AS(import_external_hidden(pmte, index), DataError);

    std::remove(pmte.c_str());
    std::remove(index.c_str());
}
