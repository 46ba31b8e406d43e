import numpy as np
import pytest

from relic import schema as sc


def shop_tables():
    return {
        "users": {
            "user_id": ["u1", "u2", "u3"],
            "age": [31, 45, 27],
            "signup_date": ["2025-01-01", "2025-02-10", "2025-03-05"],
        },
        "orders": {
            "order_id": ["o1", "o2", "o3", "o4"],
            "user_id": ["u1", "u1", "u2", "u3"],
            "item_id": ["i2", "i1", "i1", "i2"],
            "price": [5.0, 2.5, 9.9, 1.0],
            "quantity": [1, 3, 2, 4],
            "order_time": ["2025-03-01T10:00:00", "2025-03-02T11:30:00",
                           "2025-03-04T09:00:00", "2025-03-06T17:45:00"],
        },
        "items": {
            "item_id": ["i1", "i2"],
            "category": ["tools", "toys"],
        },
    }


def test_infer_shop_schema_keys_and_links():
    schema = sc.infer_schema(shop_tables())
    users = schema.table("users")
    orders = schema.table("orders")
    items = schema.table("items")
    assert users.primary_key == "user_id"
    assert orders.primary_key == "order_id"
    assert items.primary_key == "item_id"
    link_names = {l.name for l in schema.links}
    assert "orders.user_id->users" in link_names
    assert "orders.item_id->items" in link_names
    assert orders.time_column == "order_time"
    assert items.time_column is None
    assert users.column("age").stype == sc.SemanticType.NUMERICAL
    assert items.column("category").stype == sc.SemanticType.CATEGORICAL


def test_single_table_unique_id_becomes_pk_without_links():
    schema = sc.infer_schema({"widgets": {"id": [1, 2, 3], "weight": [1.0, 2.0, 3.0]}})
    assert schema.table("widgets").primary_key == "id"
    assert schema.links == []


def test_link_requires_value_containment():
    tables = shop_tables()
    tables["orders"]["user_id"] = ["u1", "u9", "u2", "u3"]  # u9 not a user
    schema = sc.infer_schema(tables)
    assert all(l.fkey_column != "user_id" for l in schema.links)


def test_inference_is_idempotent_on_schema_export():
    tables = shop_tables()
    first = sc.infer_schema(tables)
    second = sc.infer_schema(tables)
    assert first.to_json() == second.to_json()
    assert sc.Schema.from_json(first.to_json()).to_json() == first.to_json()


def test_duplicate_table_names_rejected():
    with pytest.raises(sc.SchemaError, match="duplicate"):
        sc.Schema(tables=[sc.TableMeta("t", [sc.Column("a", sc.SemanticType.NUMERICAL)]),
                          sc.TableMeta("t", [sc.Column("a", sc.SemanticType.NUMERICAL)])]
                  ).validate()


def test_unclassifiable_column_rejected():
    with pytest.raises(sc.SchemaError, match="no supported"):
        sc.infer_schema({"t": {"x": [object(), object()]}})


def test_override_add_derived_column():
    schema = sc.infer_schema(shop_tables())
    out = sc.override_schema(schema, [sc.AddDerivedColumn("orders", "total",
                                                          "price * quantity")])
    assert out.table("orders").column("total").stype == sc.SemanticType.NUMERICAL
    assert schema.table("orders").has_column("total") is False  # original untouched


def test_override_set_stype():
    schema = sc.infer_schema(shop_tables())
    out = sc.override_schema(schema, [sc.SetSemanticType("items", "category",
                                                         sc.SemanticType.TEXT)])
    assert out.table("items").column("category").stype == sc.SemanticType.TEXT


def test_add_link_to_table_without_pk_fails():
    schema = sc.Schema(tables=[
        sc.TableMeta("users", [sc.Column("name", sc.SemanticType.TEXT)]),
        sc.TableMeta("orders", [sc.Column("user_id", sc.SemanticType.IDENTIFIER)]),
    ])
    with pytest.raises(sc.SchemaError, match="no primary key"):
        sc.override_schema(schema, [sc.AddLink("orders", "user_id", "users")])


def test_derived_expression_type_mismatch():
    schema = sc.infer_schema(shop_tables())
    with pytest.raises(sc.SchemaError, match="type mismatch"):
        sc.override_schema(schema, [sc.AddDerivedColumn("items", "bad", "category * 2")])


def test_expression_eval_null_propagation():
    out = sc.eval_expression("(a + b) / c", {
        "a": np.array([1.0, np.nan, 2.0]),
        "b": np.array([1.0, 1.0, 1.0]),
        "c": np.array([2.0, 2.0, 0.0]),
    })
    np.testing.assert_allclose(out[0], 1.0)
    assert np.isnan(out[1]) and np.isnan(out[2])


def test_expression_parse_errors():
    with pytest.raises(sc.SchemaError):
        sc.parse_expression("price *")
    with pytest.raises(sc.SchemaError):
        sc.parse_expression("price @ 2")
    with pytest.raises(sc.SchemaError):
        sc.parse_expression("(price + 1")
