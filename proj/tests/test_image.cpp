#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mimlite/image.hpp"
#include "mimlite/rng.hpp"

using namespace mimlite;

namespace {

Image quantised_random(Rng& rng, int w, int h) {
    Image img(w, h, 3);
    for (auto& v : img.data) v = static_cast<double>(rng.uniform_index(256)) / 255.0;
    return img;
}

}  // namespace

TEST_CASE("ppm files round-trip exactly at 8-bit resolution") {
    Rng rng(1);
    Image img = quantised_random(rng, 9, 7);
    save_ppm(img, "rt.ppm");
    Image back = load_ppm("rt.ppm");
    REQUIRE(back.width == 9);
    REQUIRE(back.height == 7);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));
    std::filesystem::remove("rt.ppm");
}

TEST_CASE("png files round-trip exactly at 8-bit resolution") {
    Rng rng(2);
    Image img = quantised_random(rng, 12, 5);
    save_png(img, "rt.png");
    Image back = load_png("rt.png");
    REQUIRE(back.width == 12);
    REQUIRE(back.height == 5);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));
    std::filesystem::remove("rt.png");
}

TEST_CASE("decode dispatches on magic bytes and rejects junk") {
    Rng rng(3);
    Image img = quantised_random(rng, 4, 4);
    save_ppm(img, "d.ppm");
    save_png(img, "d.png");
    CHECK(decode_image("d.ppm").width == 4);
    CHECK(decode_image("d.png").width == 4);
    {
        std::ofstream f("d.bin", std::ios::binary);
        f << "not an image at all";
    }
    CHECK_THROWS_AS(decode_image("d.bin"), InputError);
    CHECK_THROWS_AS(decode_image("missing.png"), InputError);
    {
        // Truncated PPM payload.
        std::ofstream f("d2.ppm", std::ios::binary);
        f << "P6\n4 4\n255\nabc";
    }
    CHECK_THROWS_AS(load_ppm("d2.ppm"), InputError);
    for (const char* p : {"d.ppm", "d.png", "d.bin", "d2.ppm"}) std::filesystem::remove(p);
}

TEST_CASE("bilinear resize is identity at the same size and preserves constants") {
    Rng rng(4);
    Image img = quantised_random(rng, 8, 6);
    Image same = resize_bilinear(img, 8, 6);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(same.data[i] == img.data[i]);

    Image flat(5, 5, 3, 0.42);
    Image up = resize_bilinear(flat, 13, 9);
    for (double v : up.data) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("horizontal flip is an involution") {
    Rng rng(5);
    Image img = quantised_random(rng, 7, 3);
    Image twice = hflip(hflip(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(twice.data[i] == img.data[i]);
    CHECK(hflip(img).at(0, 0, 0) == img.at(0, 6, 0));
}

TEST_CASE("crop extracts the exact window") {
    Rng rng(6);
    Image img = quantised_random(rng, 10, 8);
    Image c = crop(img, 2, 3, 4, 5);
    CHECK(c.width == 4);
    CHECK(c.height == 5);
    CHECK(c.at(0, 0, 1) == img.at(3, 2, 1));
    CHECK(c.at(4, 3, 2) == img.at(7, 5, 2));
    CHECK_THROWS_AS(crop(img, 8, 0, 4, 4), InputError);
}

TEST_CASE("plot rasterisers produce canvases of the requested geometry") {
    Mat values(3, 5);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c) values(r, c) = (r * 5.0 + c) / 14.0;
    Image hm = render_heatmap(values, 10, 0.0, 1.0);
    CHECK(hm.width == 50);
    CHECK(hm.height == 30);

    std::vector<std::vector<double>> groups{{0.1, 0.2, 0.3}, {0.5, 0.9, 0.7, 0.6}};
    Image bp = render_boxplot(groups, 120, 80, 0.0, 1.0);
    CHECK(bp.width == 120);
    CHECK(bp.height == 80);
}
